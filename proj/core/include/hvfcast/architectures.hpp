#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hvfcast/optim.hpp"
#include "hvfcast/tape.hpp"

namespace hvfcast {

enum class Family { fully_connected, full_bn, residual, cascade };

std::string_view to_string(Family f);
Family parse_family(std::string_view s);

struct ModelSpec {
  Family family = Family::cascade;
  int depth = 5;  // blocks; ignored for fully_connected
  std::array<std::size_t, 3> widths{64, 128, 256};
  std::size_t in_channels = 1;
  std::size_t fc_hidden = 2048;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  // "FullyConnected", "FullBN-3", "Residual-7", "Cascade-5".
  std::string name() const;
  // Structural identity: everything that determines the parameter layout.
  bool same_architecture(const ModelSpec& o) const;
  void validate() const;
};

// Parses a name produced by ModelSpec::name(); other fields take defaults.
ModelSpec spec_from_name(std::string_view name);

// The nine candidate architectures in canonical order.
std::vector<ModelSpec> canonical_specs();

// One node of the layer graph. Input index -1 is the raw model input;
// other indices refer to earlier layers' outputs.
struct Layer {
  enum class Kind {
    conv,           // conv2d, activation per `act`
    conv_bn_relu,   // conv2d -> batch_norm -> relu
    dense,          // fully connected, activation per `act`
    add,            // elementwise sum of two inputs
    concat,         // channel concatenation in input order
    flatten,        // (N,C,H,W) -> (N, C*H*W)
    to_grid,        // (N, H*W) -> (N, 1, H, W)
  };
  Kind kind;
  std::string name;
  std::vector<int> inputs;
  nn::Activation act = nn::Activation::linear;
  int bn = -1;  // index into Model::bn_states

  bool weighted() const { return kind == Kind::conv || kind == Kind::conv_bn_relu || kind == Kind::dense; }
};

struct Model {
  ModelSpec spec;
  nn::ParamSet params;
  std::vector<nn::BatchNormState> bn_states;
  std::vector<std::string> bn_names;
  std::vector<Layer> topology;
  nn::AdamState optimizer;
};

Model build_model(const ModelSpec& spec);

// Builds the forward graph on `tape`. Train mode updates BN running stats.
nn::Var forward(Model& m, nn::Tape& tape, nn::Var x, nn::Mode mode);
nn::Tensor forward(Model& m, const nn::Tensor& x, nn::Mode mode);
// Inference on a frozen model; never mutates it, safe to share across threads.
nn::Tensor infer(const Model& m, const nn::Tensor& x);

// Closed-form layer count per family.
int count_layers(const ModelSpec& spec);
// Weighted layers actually present in a built topology.
int count_layers(const Model& m);
std::size_t count_parameters(const Model& m);

struct Provenance {
  std::string phase;
  std::string candidate;  // architecture/combo name or interval bin label
  int fold = -1;
  int epoch = -1;
};

// manifest.json + weights.bin (little-endian f64, manifest order).
void save_weights(const Model& m, const std::filesystem::path& dir, const Provenance& prov = {});
Model load_weights(const std::filesystem::path& dir);
Provenance load_provenance(const std::filesystem::path& dir);

// Copies parameters and BN running statistics; the destination gets a
// fresh optimizer state.
void transfer_weights(const Model& src, Model& dst);

// FNV-1a over parameter and BN-statistic bytes, as 16 hex digits.
std::string weights_hash(const Model& m);

}  // namespace hvfcast

namespace hvfcast {

std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(std::string_view text);

}  // namespace hvfcast
