#pragma once
// Small, boring artifact writers and readers.  The image format is ASCII
// PGM (P2) with a "# range lo hi" comment so real-valued grids survive the
// trip through 8-bit gray levels (up to quantization).

#include <string>

#include "fw/tensor.hpp"

namespace fw {

// Writes `image` (any 2-D tensor) as a 255-level PGM, mapping [lo, hi]
// linearly onto [0, 255] (values outside clamp).  Throws std::runtime_error
// when the file cannot be written, std::invalid_argument on a non-2-D image
// or an empty range.
void save_pgm(const std::string& path, const Tensor& image, double lo = -1.0, double hi = 1.0);

// Reads a PGM written by save_pgm (or any P2 file), mapping gray levels
// back through the "# range" comment when present, otherwise onto [0, 1].
// Throws std::runtime_error naming the problem (missing file, wrong magic,
// truncated pixel data).
Tensor load_pgm(const std::string& path);

}  // namespace fw
