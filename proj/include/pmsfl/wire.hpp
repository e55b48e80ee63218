#pragma once

#include <cstdint>
#include <vector>

#include "pmsfl/mask.hpp"

namespace pmsfl::wire {

// Binary mask wire format: a shape header (u32 layer count, then u32
// rows/cols per layer, little-endian) followed by the mask bits packed
// layer-major, row-major within a layer, little-endian bit order within
// each byte, padded to a byte boundary once at the end.
std::vector<std::uint8_t> pack_mask(const mask::BinaryMask& m,
                                    const mask::Shapes& shapes);

mask::BinaryMask unpack_mask(const std::vector<std::uint8_t>& bytes,
                             mask::Shapes* shapes_out = nullptr);

std::size_t header_bytes(const mask::Shapes& shapes);

// header + ceil(total_bits / 8): exactly one bit per parameter.
std::size_t mask_wire_bytes(const mask::Shapes& shapes);

// header + 8 bytes per parameter (float64 uplink used by the
// probabilistic-mask comparison mode and by weight transfer).
std::size_t dense_wire_bytes(const mask::Shapes& shapes);

// Smashed batch: u32 count, u32 width, count*width float64 activations,
// count u32 labels.
std::size_t smashed_wire_bytes(std::size_t count, std::size_t width);

// Gradient return: u32 count, u32 width, count*width float64.
std::size_t grad_wire_bytes(std::size_t count, std::size_t width);

}  // namespace pmsfl::wire
