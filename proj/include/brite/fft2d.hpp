#pragma once

// Thin 2D FFT layer over FFTW (complex transforms, deterministic plans).

#include <complex>
#include <vector>

#include "brite/fields.hpp"

namespace brite {

struct ComplexImage {
    int h{0};
    int w{0};
    std::vector<std::complex<double>> v;

    ComplexImage() = default;
    ComplexImage(int height, int width)
        : h(height), w(width), v(static_cast<size_t>(height) * width) {}

    std::complex<double>& at(int x, int y) { return v[static_cast<size_t>(y) * w + x]; }
    std::complex<double> at(int x, int y) const { return v[static_cast<size_t>(y) * w + x]; }
};

/// Forward 2D DFT (unnormalized).
ComplexImage fft2(const ScalarField2D& img);
ComplexImage fft2(const ComplexImage& img);

/// Inverse 2D DFT, normalized by 1/(H·W).
ComplexImage ifft2(const ComplexImage& f);

/// Real part of the normalized inverse DFT.
ScalarField2D ifft2_real(const ComplexImage& f, double sx_mm = 1.0, double sy_mm = 1.0);

/// Magnitude spectrum with the zero-frequency bin moved to the center.
ScalarField2D fft_magnitude_centered(const ScalarField2D& img);

/// Frequency (cycles/px) of bin k along an axis of length n, after centering.
double centered_bin_freq(int k, int n);

} // namespace brite
