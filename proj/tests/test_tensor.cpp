#include <catch2/catch_amalgamated.hpp>

#include "vf/digest.hpp"
#include "vf/tensor.hpp"

using vf::Tensor;

TEST_CASE("tensor shape and storage invariants") {
  Tensor<double> t({2, 3});
  REQUIRE(t.numel() == 6);
  REQUIRE(t.rank() == 2);
  REQUIRE(t.extent(0) == 2);
  REQUIRE_THROWS_AS(t.extent(5), vf::DimensionError);

  SECTION("data length must match shape") {
    REQUIRE_THROWS_AS(Tensor<double>({2, 2}, {1.0, 2.0, 3.0}), vf::DimensionError);
  }
  SECTION("non-positive extents rejected") {
    REQUIRE_THROWS_AS(Tensor<double>({2, 0}), vf::DimensionError);
    REQUIRE_THROWS_AS(Tensor<double>({-1}), vf::DimensionError);
  }
  SECTION("copies share the buffer") {
    Tensor<double> a = Tensor<double>::full({3}, 7.0);
    Tensor<double> b = a;
    REQUIRE(a.storage().get() == b.storage().get());
  }
  SECTION("grad buffer appears with requires_grad and matches shape") {
    Tensor<double> a({4});
    REQUIRE(!a.has_grad());
    a.set_requires_grad(true);
    REQUIRE(a.has_grad());
    REQUIRE(a.grad().size() == 4);
  }
  SECTION("item() wants a scalar") {
    REQUIRE(Tensor<double>::scalar(2.5).item() == 2.5);
    REQUIRE_THROWS_AS(Tensor<double>({2}).item(), vf::ContractError);
  }
}

TEST_CASE("fnv digest is stable and order-sensitive") {
  REQUIRE(vf::fnv1a64("") == 0xcbf29ce484222325ull);
  REQUIRE(vf::fnv1a64("a") != vf::fnv1a64("b"));
  REQUIRE(vf::fnv1a64("ab") != vf::fnv1a64("ba"));
  REQUIRE(vf::digest_hex(0x1234abcdull) == "000000001234abcd");
}
