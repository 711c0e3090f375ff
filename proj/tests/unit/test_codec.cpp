#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>

#include "tunalab/codec.hpp"
#include "tunalab/errors.hpp"
#include "tunalab/ndmath.hpp"

using namespace tunalab;

TEST_CASE("base64 reference vectors") {
  const std::pair<const char*, const char*> cases[] = {{"", ""},         {"f", "Zg=="},         {"fo", "Zm8="},
                                                       {"foo", "Zm9v"}, {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
                                                       {"foobar", "Zm9vYmFy"}};
  for (const auto& [plain, coded] : cases) {
    CHECK(base64_encode(plain) == coded);
    CHECK(base64_decode(coded) == plain);
  }
}

TEST_CASE("base64 round trips arbitrary bytes") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::string bytes(rng.below(64), '\0');
    for (char& c : bytes) c = char(rng.below(256));
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
  }
}

TEST_CASE("base64 rejects malformed input") {
  CHECK_THROWS_AS(base64_decode("abc"), InvalidArgument);
  CHECK_THROWS_AS(base64_decode("ab!d"), InvalidArgument);
  CHECK_THROWS_AS(base64_decode("a==="), InvalidArgument);
  CHECK_THROWS_AS(base64_decode("ab=c"), InvalidArgument);
  CHECK_THROWS_AS(base64_decode("Zg==Zg=="), InvalidArgument);
}

TEST_CASE("formatted numbers read back exactly") {
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const double x = rng.normal() * std::pow(10.0, double(int(rng.below(20)) - 10));
    CHECK(std::strtod(format_number(x).c_str(), nullptr) == x);
  }
  CHECK(format_number(0.0) == "0");
  CHECK(format_number(-0.0) == "0");
  CHECK(format_number(0.5) == "0.5");
}
