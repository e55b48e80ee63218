#include "pmsfl/wire.hpp"

#include "pmsfl/error.hpp"

namespace pmsfl::wire {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + 4 > in.size()) fail(ErrorCode::kIo, "mask wire: truncated header");
  std::uint32_t v = in[pos] | (in[pos + 1] << 8) | (in[pos + 2] << 16) |
                    (static_cast<std::uint32_t>(in[pos + 3]) << 24);
  pos += 4;
  return v;
}

}  // namespace

std::vector<std::uint8_t> pack_mask(const mask::BinaryMask& m,
                                    const mask::Shapes& shapes) {
  if (m.layers.size() != shapes.size())
    fail(ErrorCode::kInvalidShape, "pack_mask: layer count");
  std::vector<std::uint8_t> out;
  put_u32(out, static_cast<std::uint32_t>(shapes.size()));
  std::size_t total_bits = 0;
  for (std::size_t li = 0; li < shapes.size(); ++li) {
    put_u32(out, static_cast<std::uint32_t>(shapes[li].rows));
    put_u32(out, static_cast<std::uint32_t>(shapes[li].cols));
    if (m.layers[li].size() != shapes[li].rows * shapes[li].cols)
      fail(ErrorCode::kInvalidShape, "pack_mask: layer size");
    total_bits += m.layers[li].size();
  }
  out.reserve(out.size() + (total_bits + 7) / 8);
  std::uint8_t cur = 0;
  int nbits = 0;
  for (const auto& layer : m.layers) {
    for (std::uint8_t bit : layer) {
      if (bit) cur |= static_cast<std::uint8_t>(1u << nbits);
      if (++nbits == 8) {
        out.push_back(cur);
        cur = 0;
        nbits = 0;
      }
    }
  }
  if (nbits > 0) out.push_back(cur);
  return out;
}

mask::BinaryMask unpack_mask(const std::vector<std::uint8_t>& bytes,
                             mask::Shapes* shapes_out) {
  std::size_t pos = 0;
  const std::uint32_t layer_count = get_u32(bytes, pos);
  mask::Shapes shapes(layer_count);
  std::size_t total_bits = 0;
  for (auto& s : shapes) {
    s.rows = get_u32(bytes, pos);
    s.cols = get_u32(bytes, pos);
    total_bits += s.rows * s.cols;
  }
  if (bytes.size() - pos < (total_bits + 7) / 8)
    fail(ErrorCode::kIo, "mask wire: truncated payload");
  mask::BinaryMask m;
  std::size_t bit_index = 0;
  for (const auto& s : shapes) {
    std::vector<std::uint8_t> layer(s.rows * s.cols);
    for (auto& bit : layer) {
      bit = (bytes[pos + bit_index / 8] >> (bit_index % 8)) & 1u;
      ++bit_index;
    }
    m.layers.push_back(std::move(layer));
  }
  if (shapes_out) *shapes_out = std::move(shapes);
  return m;
}

std::size_t header_bytes(const mask::Shapes& shapes) {
  return 4 + 8 * shapes.size();
}

std::size_t mask_wire_bytes(const mask::Shapes& shapes) {
  return header_bytes(shapes) + (mask::total_params(shapes) + 7) / 8;
}

std::size_t dense_wire_bytes(const mask::Shapes& shapes) {
  return header_bytes(shapes) + 8 * mask::total_params(shapes);
}

std::size_t smashed_wire_bytes(std::size_t count, std::size_t width) {
  return 8 + count * width * 8 + count * 4;
}

std::size_t grad_wire_bytes(std::size_t count, std::size_t width) {
  return 8 + count * width * 8;
}

}  // namespace pmsfl::wire
