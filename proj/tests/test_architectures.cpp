#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "hvfcast/architectures.hpp"
#include "hvfcast/error.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace hvfcast;
using hvfcast::testing::random_tensor;
using hvfcast::testing::TempDir;

namespace {

ModelSpec tiny(const std::string& name, std::size_t in_channels = 1, std::uint64_t seed = 1, int max_depth = 2) {
  ModelSpec s = spec_from_name(name);
  if (s.family != Family::fully_connected) s.depth = std::min(s.depth, max_depth);
  s.widths = {4, 8, 12};
  s.fc_hidden = 16;
  s.in_channels = in_channels;
  s.seed = seed;
  return s;
}

std::string read(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

template <class Fn>
std::string error_of(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(LayerCount, TableRows) {
  const std::pair<const char*, int> rows[] = {{"FullyConnected", 2}, {"FullBN-3", 10}, {"FullBN-5", 16},
                                              {"FullBN-7", 22},      {"Residual-3", 12}, {"Residual-5", 18},
                                              {"Residual-7", 24},    {"Cascade-3", 10},  {"Cascade-5", 16}};
  for (auto [name, n] : rows) {
    EXPECT_EQ(count_layers(spec_from_name(name)), n) << name;
    auto s = spec_from_name(name);
    s.widths = {2, 2, 2};
    s.fc_hidden = 4;
    EXPECT_EQ(count_layers(build_model(s)), n) << name;
  }
}

TEST(LayerCount, CanonicalOrder) {
  const auto specs = canonical_specs();
  ASSERT_EQ(specs.size(), 9u);
  EXPECT_EQ(specs.front().name(), "FullyConnected");
  EXPECT_EQ(specs.back().name(), "Cascade-5");
  for (const auto& s : specs) EXPECT_EQ(spec_from_name(s.name()).name(), s.name());
}

TEST(Build, CascadeConcatWidth) {
  ModelSpec s = spec_from_name("Cascade-5");
  s.in_channels = 2;
  const Model m = build_model(s);
  EXPECT_EQ(m.params.get("block3.conv1.weight").value.dim(1), 2u + 2u * 256u);
  EXPECT_EQ(m.params.get("head.weight").value.dim(1), 2u + 5u * 256u);
}

TEST(Build, UnknownFamily) { EXPECT_THROW(spec_from_name("Dense-3"), DataError); }

TEST(Params, CountArithmetic) {
  ModelSpec fc = spec_from_name("FullyConnected");
  fc.fc_hidden = 72;
  // two dense 72 -> 72 layers
  EXPECT_EQ(count_parameters(build_model(fc)), 2u * 5256u);

  ModelSpec c = spec_from_name("FullBN-3");
  c.depth = 1;
  c.widths = {64, 1, 1};
  const Model m = build_model(c);
  EXPECT_EQ(m.params.get("block1.conv1.weight").value.size() + m.params.get("block1.conv1.bias").value.size(), 640u);
  EXPECT_EQ(m.params.get("block1.conv1.gamma").value.size() + m.params.get("block1.conv1.beta").value.size(), 128u);
  std::size_t expected = 0;
  for (const auto& p : m.params.entries()) expected += p.value.size();
  EXPECT_EQ(count_parameters(m), expected);
}

TEST(Params, DeterministicFromSpec) {
  for (const auto& s : canonical_specs()) {
    ModelSpec a = s;
    a.widths = {3, 4, 5};
    a.fc_hidden = 10;
    EXPECT_EQ(weights_hash(build_model(a)), weights_hash(build_model(a)));
    ModelSpec b = a;
    b.seed = 99;
    EXPECT_NE(weights_hash(build_model(a)), weights_hash(build_model(b)));
  }
}

TEST(Forward, ShapesAndPurity) {
  std::mt19937_64 rng(1);
  for (const auto& s : canonical_specs()) {
    Model m = build_model(tiny(s.name(), 3));
    const auto x = random_tensor({2, 3, 8, 9}, rng);
    const auto y = infer(m, x);
    EXPECT_EQ(y.shape(), (nn::Shape{2, 1, 8, 9})) << s.name();
    EXPECT_EQ(infer(m, x), y);
    EXPECT_EQ(forward(m, x, nn::Mode::infer), y);
    EXPECT_THROW(infer(m, random_tensor({2, 2, 8, 9}, rng)), ShapeError);
  }
}

TEST(Forward, ZeroHeadGivesZeroOutput) {
  std::mt19937_64 rng(2);
  Model m = build_model(tiny("Cascade-3"));
  m.params.get("head.weight").value.fill(0.0);
  m.params.get("head.bias").value.fill(0.0);
  for (double v : infer(m, random_tensor({2, 1, 8, 9}, rng)).data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, TrainModeUpdatesRunningStats) {
  std::mt19937_64 rng(3);
  Model m = build_model(tiny("FullBN-3"));
  const auto before = m.bn_states.front().running_mean;
  forward(m, random_tensor({4, 1, 8, 9}, rng), nn::Mode::train);
  EXPECT_NE(m.bn_states.front().running_mean, before);
}

TEST(Forward, CascadeWiringAblation) {
  std::mt19937_64 rng(4);
  Model m = build_model(tiny("Cascade-3", 1, 1, 3));
  const auto x = random_tensor({2, 1, 8, 9}, rng);
  const auto full = infer(m, x);
  // zero the block3 weights reading block1's channels (1..12 of the concat)
  const auto& w = m.params.get("block3.conv1.weight").value;
  Model ablated = m;
  auto& wa = ablated.params.get("block3.conv1.weight").value;
  const std::size_t O = w.dim(0), C = w.dim(1);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t c = 1; c < 1 + 12; ++c)
      for (std::size_t k = 0; k < 9; ++k) wa[(o * C + c) * 9 + k] = 0.0;
  EXPECT_NE(infer(ablated, x), full);
}

TEST(Forward, CascadeConcatTopology) {
  const Model m = build_model(tiny("Cascade-3", 1, 1, 3));
  for (const auto& l : m.topology)
    if (l.name == "block3.concat") EXPECT_EQ(l.inputs.size(), 3u);
}

TEST(Weights, RoundTripBitExact) {
  TempDir dir;
  std::mt19937_64 rng(5);
  for (const auto& s : canonical_specs()) {
    Model m = build_model(tiny(s.name(), 2));
    forward(m, random_tensor({3, 2, 8, 9}, rng), nn::Mode::train);
    const auto path = dir / s.name();
    save_weights(m, path, {"arch", s.name(), 4, 17});
    const Model back = load_weights(path);
    ASSERT_EQ(back.params.size(), m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i)
      EXPECT_EQ(back.params.entries()[i].value, m.params.entries()[i].value);
    for (std::size_t i = 0; i < m.bn_states.size(); ++i) {
      EXPECT_EQ(back.bn_states[i].running_mean, m.bn_states[i].running_mean);
      EXPECT_EQ(back.bn_states[i].running_var, m.bn_states[i].running_var);
    }
    EXPECT_TRUE(back.spec.same_architecture(m.spec));
    EXPECT_EQ(weights_hash(back), weights_hash(m));
    const auto x = random_tensor({2, 2, 8, 9}, rng);
    EXPECT_EQ(infer(back, x), infer(m, x));
    const auto prov = load_provenance(path);
    EXPECT_EQ(prov.phase, "arch");
    EXPECT_EQ(prov.fold, 4);
    EXPECT_EQ(prov.epoch, 17);
  }
}

TEST(Weights, TruncatedBlob) {
  TempDir dir;
  save_weights(build_model(tiny("Cascade-2")), dir.path());
  auto blob = read(dir / "weights.bin");
  blob.resize(blob.size() - 8);
  write(dir / "weights.bin", blob);
  EXPECT_NE(error_of([&] { load_weights(dir.path()); }).find("length mismatch"), std::string::npos);
}

TEST(Weights, UnsupportedVersion) {
  TempDir dir;
  save_weights(build_model(tiny("Cascade-2")), dir.path());
  auto j = nlohmann::json::parse(read(dir / "manifest.json"));
  j["format_version"] = "2";
  write(dir / "manifest.json", j.dump());
  EXPECT_NE(error_of([&] { load_weights(dir.path()); }).find("unsupported version"), std::string::npos);
}

TEST(Weights, ChecksumNamesLayer) {
  TempDir dir;
  save_weights(build_model(tiny("Cascade-2")), dir.path());
  auto blob = read(dir / "weights.bin");
  blob[3] ^= 0x20;
  write(dir / "weights.bin", blob);
  const auto msg = error_of([&] { load_weights(dir.path()); });
  EXPECT_NE(msg.find("checksum mismatch"), std::string::npos) << msg;
  EXPECT_NE(msg.find("block1.conv1.weight"), std::string::npos) << msg;
}

TEST(Weights, ShapeMismatchNamesLayer) {
  TempDir dir;
  save_weights(build_model(tiny("Cascade-2")), dir.path());
  auto j = nlohmann::json::parse(read(dir / "manifest.json"));
  j["entries"][0]["shape"][0] = 5;
  write(dir / "manifest.json", j.dump());
  const auto msg = error_of([&] { load_weights(dir.path()); });
  EXPECT_NE(msg.find("block1.conv1.weight"), std::string::npos) << msg;
}

TEST(Transfer, CopiesWeightsAndResetsOptimizer) {
  std::mt19937_64 rng(6);
  Model src = build_model(tiny("Residual-3", 2, 1));
  forward(src, random_tensor({3, 2, 8, 9}, rng), nn::Mode::train);
  src.optimizer.step_count = 12;
  Model dst = build_model(tiny("Residual-3", 2, 2));
  dst.optimizer.step_count = 5;
  transfer_weights(src, dst);
  const auto x = random_tensor({2, 2, 8, 9}, rng);
  EXPECT_EQ(infer(dst, x), infer(src, x));
  EXPECT_EQ(weights_hash(dst), weights_hash(src));
  EXPECT_EQ(dst.optimizer.step_count, 0);
  EXPECT_TRUE(dst.optimizer.first_moment.empty());
}

TEST(Transfer, MismatchListsFields) {
  const Model src = build_model(tiny("Cascade-2", 1));
  Model dst = build_model(tiny("Cascade-2", 2));
  const auto msg = error_of([&] { transfer_weights(src, dst); });
  EXPECT_NE(msg.find("in_channels"), std::string::npos) << msg;
  Model other = build_model(tiny("FullBN-3", 1));
  const auto msg2 = error_of([&] { transfer_weights(src, other); });
  EXPECT_NE(msg2.find("family"), std::string::npos) << msg2;
}

TEST(Spec, JsonRoundTrip) {
  ModelSpec s = tiny("Residual-5", 4, 77);
  s.lr = 3e-4;
  const auto back = spec_from_json(spec_to_json(s));
  EXPECT_TRUE(back.same_architecture(s));
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(back.lr, 3e-4);
}
