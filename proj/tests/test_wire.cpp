#include <doctest.h>

#include "pmsfl/error.hpp"
#include "pmsfl/wire.hpp"

using namespace pmsfl;

TEST_CASE("mask pack/unpack round trip") {
  Rng rng(21);
  mask::Shapes shapes{{3, 5}, {2, 7}};
  const auto theta = mask::ProbMask::constant(shapes, 0.5);
  const auto m = mask::sample_mask(theta, rng);
  const auto bytes = wire::pack_mask(m, shapes);
  mask::Shapes back_shapes;
  const auto back = wire::unpack_mask(bytes, &back_shapes);
  CHECK(back.layers == m.layers);
  CHECK(back_shapes == shapes);
}

TEST_CASE("bit order within bytes is little-endian") {
  mask::Shapes shapes{{1, 8}};
  mask::BinaryMask m;
  m.layers = {{1, 0, 0, 0, 0, 0, 0, 1}};  // bits 0 and 7
  const auto bytes = wire::pack_mask(m, shapes);
  CHECK(bytes.size() == wire::header_bytes(shapes) + 1);
  CHECK(bytes.back() == 0x81);
}

TEST_CASE("mask payload is exactly one bit per parameter") {
  mask::Shapes shapes{{4, 5}, {3, 3}};  // 29 params -> 4 payload bytes
  CHECK(wire::header_bytes(shapes) == 4 + 8 * 2);
  CHECK(wire::mask_wire_bytes(shapes) == wire::header_bytes(shapes) + 4);
  CHECK(wire::dense_wire_bytes(shapes) == wire::header_bytes(shapes) + 29 * 8);
}

TEST_CASE("float payload is 64x the binary payload when d is a byte multiple") {
  mask::Shapes shapes{{16, 32}, {32, 32}};  // 1536 params
  const std::size_t header = wire::header_bytes(shapes);
  const std::size_t binary_payload = wire::mask_wire_bytes(shapes) - header;
  const std::size_t float_payload = wire::dense_wire_bytes(shapes) - header;
  CHECK(binary_payload * 64 == float_payload);
}

TEST_CASE("smashed and gradient wire sizes") {
  CHECK(wire::smashed_wire_bytes(32, 12) == 8 + 32 * 12 * 8 + 32 * 4);
  CHECK(wire::grad_wire_bytes(32, 12) == 8 + 32 * 12 * 8);
}

TEST_CASE("unpack rejects truncated buffers") {
  mask::Shapes shapes{{2, 8}};
  mask::BinaryMask m;
  m.layers = {std::vector<std::uint8_t>(16, 1)};
  auto bytes = wire::pack_mask(m, shapes);
  bytes.pop_back();
  CHECK_THROWS_AS(wire::unpack_mask(bytes), Error);
}
