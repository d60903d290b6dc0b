#pragma once

// Binary container + JSON sidecar persistence for tagged sequences,
// displacement-field series, and single scalar rasters.
//
// Container layout (little-endian): magic "TGSQ", u32 version=1, u32 T,
// u32 H, u32 W, u8 plane-count, then T×planes×H×W float32 values laid out
// frame-major, plane-major within a frame, row-major within a plane.
// Sequences store two planes per frame (horizontal-tag image first, then
// vertical); displacement series store two planes per frame (x component
// first, then y); scalar rasters store one plane, T=1.
//
// The sidecar `<name>.meta.json` carries spacing, timestamps, tag period,
// fading parameters, the generator seed, and — when ground truth is
// embedded — relative references to ground-truth files stored next to the
// sequence.

#include <string>
#include <vector>

#include "brite/tagging.hpp"

namespace brite {

void save_sequence(const std::string& path, const TaggedSequence& seq);
TaggedSequence load_sequence(const std::string& path);

void save_displacement_series(const std::string& path, const std::vector<VectorField2D>& fields);
std::vector<VectorField2D> load_displacement_series(const std::string& path);

void save_scalar_image(const std::string& path, const ScalarField2D& image);
ScalarField2D load_scalar_image(const std::string& path);

/// Sidecar path rule: strip the final extension, append ".meta.json".
std::string sidecar_path(const std::string& path);

} // namespace brite
