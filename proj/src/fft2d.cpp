#include "brite/fft2d.hpp"

#include <fftw3.h>

#include <cmath>

namespace brite {

namespace {

// FFTW planning is not thread-safe; transforms here are serial by contract.
ComplexImage run_dft(const ComplexImage& in, int sign) {
    ComplexImage out(in.h, in.w);
    // FFTW_ESTIMATE keeps planning deterministic and leaves the input intact.
    fftw_plan plan = fftw_plan_dft_2d(
        in.h, in.w,
        reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in.v.data())),
        reinterpret_cast<fftw_complex*>(out.v.data()), sign, FFTW_ESTIMATE);
    if (!plan) throw NumericError("fft2: planning failed");
    fftw_execute(plan);
    fftw_destroy_plan(plan);
    return out;
}

} // namespace

ComplexImage fft2(const ComplexImage& img) { return run_dft(img, FFTW_FORWARD); }

ComplexImage fft2(const ScalarField2D& img) {
    ComplexImage c(img.h, img.w);
    for (size_t i = 0; i < img.data.size(); ++i) c.v[i] = {img.data[i], 0.0};
    return run_dft(c, FFTW_FORWARD);
}

ComplexImage ifft2(const ComplexImage& f) {
    ComplexImage out = run_dft(f, FFTW_BACKWARD);
    const double norm = 1.0 / (static_cast<double>(f.h) * f.w);
    for (auto& z : out.v) z *= norm;
    return out;
}

ScalarField2D ifft2_real(const ComplexImage& f, double sx_mm, double sy_mm) {
    ComplexImage c = ifft2(f);
    ScalarField2D out(f.h, f.w, sx_mm, sy_mm);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = c.v[i].real();
    return out;
}

ScalarField2D fft_magnitude_centered(const ScalarField2D& img) {
    ComplexImage f = fft2(img);
    ScalarField2D out(img.h, img.w, img.sx_mm, img.sy_mm);
    const int hh = img.h / 2, hw = img.w / 2;
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const int sx = (x + hw) % img.w;
            const int sy = (y + hh) % img.h;
            out.at(sx, sy) = std::abs(f.at(x, y));
        }
    }
    return out;
}

double centered_bin_freq(int k, int n) { return static_cast<double>(k - n / 2) / n; }

} // namespace brite
