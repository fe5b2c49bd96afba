#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "biozsl/checkpoint.hpp"
#include "biozsl/io.hpp"
#include "biozsl/rng.hpp"

using namespace biozsl;

namespace {

ParamSet random_set(Rng& rng) {
  ParamSet ps;
  ps.add_uniform("W1", {5, 3}, 3, 5, rng.fork("w1"));
  ps.add_uniform("b1", {5}, 1, 5, rng.fork("b1"));
  ps.add_uniform("W2", {2, 5}, 5, 2, rng.fork("w2"));
  return ps;
}

}  // namespace

TEST_CASE("checkpoint round-trips bit-exactly", "[checkpoint]") {
  Rng rng(2024);
  const ParamSet ps = random_set(rng);
  std::ostringstream out(std::ios::binary);
  ckpt::save(out, ckpt::collect({{"model", &ps}}));
  const std::string bytes = out.str();

  std::istringstream in(bytes, std::ios::binary);
  const auto tensors = ckpt::load(in);
  REQUIRE(tensors.size() == 3);
  REQUIRE(tensors[0].first == "model/W1");
  for (const auto& [name, t] : tensors) {
    const Parameter& p = ps.at(name.substr(std::strlen("model/")));
    REQUIRE(t.shape == p.value.shape);
    REQUIRE(std::memcmp(t.values.data(), p.value.values.data(), t.values.size() * sizeof(double)) == 0);
  }

  // Saving the loaded tensors again reproduces the byte stream.
  ParamSet restored;
  restored.add("W1", {5, 3});
  restored.add("b1", {5});
  restored.add("W2", {2, 5});
  ckpt::restore(restored, "model", tensors);
  std::ostringstream out2(std::ios::binary);
  ckpt::save(out2, ckpt::collect({{"model", &restored}}));
  REQUIRE(out2.str() == bytes);
}

TEST_CASE("checkpoint file round-trip", "[checkpoint]") {
  Rng rng(2025);
  const ParamSet ps = random_set(rng);
  const auto path = std::filesystem::temp_directory_path() / "biozsl_ckpt_test.bin";
  ckpt::save_file(path, ckpt::collect({{"m", &ps}}));
  const auto tensors = ckpt::load_file(path);
  REQUIRE(tensors.size() == 3);
  REQUIRE(tensors[2].first == "m/W2");
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects bad magic and truncation", "[checkpoint]") {
  Rng rng(2026);
  const ParamSet ps = random_set(rng);
  std::ostringstream out(std::ios::binary);
  ckpt::save(out, ckpt::collect({{"m", &ps}}));
  std::string bytes = out.str();

  {
    std::string corrupted = bytes;
    corrupted[0] = 'X';
    std::istringstream in(corrupted, std::ios::binary);
    REQUIRE_THROWS_AS(ckpt::load(in), FormatError);
  }
  {
    std::istringstream in(bytes.substr(0, bytes.size() / 2), std::ios::binary);
    REQUIRE_THROWS_AS(ckpt::load(in), FormatError);
  }
}

TEST_CASE("restore rejects shape mismatches", "[checkpoint]") {
  Rng rng(2027);
  const ParamSet ps = random_set(rng);
  std::ostringstream out(std::ios::binary);
  ckpt::save(out, ckpt::collect({{"m", &ps}}));
  std::istringstream in(out.str(), std::ios::binary);
  const auto tensors = ckpt::load(in);

  ParamSet wrong;
  wrong.add("W1", {4, 3});
  REQUIRE_THROWS_AS(ckpt::restore(wrong, "m", tensors), ShapeError);
}
