#include "hvfcast/architectures.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "hvfcast/domain.hpp"
#include "hvfcast/error.hpp"
#include "hvfcast/seed.hpp"
#include "json.hpp"

namespace hvfcast {

using nlohmann::json;
using nn::Activation;
using nn::Mode;
using nn::Shape;
using nn::Tensor;
using nn::Var;

static_assert(std::endian::native == std::endian::little, "weights.bin codec assumes little-endian");

std::string_view to_string(Family f) {
  switch (f) {
    case Family::fully_connected: return "FullyConnected";
    case Family::full_bn: return "FullBN";
    case Family::residual: return "Residual";
    case Family::cascade: return "Cascade";
  }
  return "?";
}

Family parse_family(std::string_view s) {
  if (s == "FullyConnected") return Family::fully_connected;
  if (s == "FullBN") return Family::full_bn;
  if (s == "Residual") return Family::residual;
  if (s == "Cascade") return Family::cascade;
  throw DataError("unknown architecture family '" + std::string(s) + "'");
}

std::string ModelSpec::name() const {
  if (family == Family::fully_connected) return "FullyConnected";
  return std::string(to_string(family)) + "-" + std::to_string(depth);
}

bool ModelSpec::same_architecture(const ModelSpec& o) const {
  if (family != o.family || widths != o.widths || in_channels != o.in_channels) return false;
  if (family == Family::fully_connected) return fc_hidden == o.fc_hidden;
  return depth == o.depth;
}

void ModelSpec::validate() const {
  if (in_channels < 1) throw DataError("model spec: in_channels must be >= 1");
  if (family == Family::fully_connected) {
    if (fc_hidden < 1) throw DataError("model spec: fc_hidden must be >= 1");
  } else {
    if (depth < 1) throw DataError("model spec: depth must be >= 1");
    for (auto w : widths)
      if (w < 1) throw DataError("model spec: widths must be positive");
  }
  if (batch_size < 1) throw DataError("model spec: batch_size must be >= 1");
  if (!(lr > 0.0)) throw DataError("model spec: lr must be positive");
}

ModelSpec spec_from_name(std::string_view name) {
  ModelSpec s;
  if (name == "FullyConnected") {
    s.family = Family::fully_connected;
    s.depth = 0;
    return s;
  }
  const auto dash = name.rfind('-');
  if (dash == std::string_view::npos) throw DataError("unknown architecture '" + std::string(name) + "'");
  s.family = parse_family(name.substr(0, dash));
  try {
    s.depth = std::stoi(std::string(name.substr(dash + 1)));
  } catch (const std::exception&) {
    throw DataError("bad depth in architecture '" + std::string(name) + "'");
  }
  s.validate();
  return s;
}

std::vector<ModelSpec> canonical_specs() {
  std::vector<ModelSpec> out;
  for (auto name : {"FullyConnected", "FullBN-3", "FullBN-5", "FullBN-7", "Residual-3", "Residual-5",
                    "Residual-7", "Cascade-3", "Cascade-5"})
    out.push_back(spec_from_name(name));
  return out;
}

int count_layers(const ModelSpec& spec) {
  const int k = spec.depth;
  switch (spec.family) {
    case Family::fully_connected: return 2;
    case Family::full_bn: return 3 * k + 1;
    case Family::residual: return 3 * k + 3;
    case Family::cascade: return 3 * k + 1;
  }
  throw DataError("unknown architecture family");
}

int count_layers(const Model& m) {
  int n = 0;
  for (const auto& l : m.topology) n += l.weighted();
  return n;
}

std::size_t count_parameters(const Model& m) { return m.params.scalar_count(); }

// ---- construction -------------------------------------------------------------

namespace {

class Builder {
 public:
  explicit Builder(Model& m) : m_(m), rng_(m.spec.seed) {}

  int conv(const std::string& name, std::vector<int> inputs, std::size_t cin, std::size_t cout,
           std::size_t k, Layer::Kind kind, Activation act = Activation::linear) {
    he_uniform(name + ".weight", Shape{cout, cin, k, k}, cin * k * k);
    m_.params.add(name + ".bias", Tensor(Shape{cout}));
    Layer l{kind, name, std::move(inputs), act, -1};
    if (kind == Layer::Kind::conv_bn_relu) {
      m_.params.add(name + ".gamma", Tensor(Shape{cout}, 1.0));
      m_.params.add(name + ".beta", Tensor(Shape{cout}));
      l.bn = static_cast<int>(m_.bn_states.size());
      m_.bn_states.emplace_back(cout);
      m_.bn_names.push_back(name);
    }
    return push(std::move(l));
  }

  int dense(const std::string& name, int input, std::size_t in, std::size_t out, Activation act) {
    he_uniform(name + ".weight", Shape{out, in}, in);
    m_.params.add(name + ".bias", Tensor(Shape{out}));
    return push({Layer::Kind::dense, name, {input}, act, -1});
  }

  int op(Layer::Kind kind, const std::string& name, std::vector<int> inputs) {
    return push({kind, name, std::move(inputs), Activation::linear, -1});
  }

 private:
  int push(Layer l) {
    m_.topology.push_back(std::move(l));
    return static_cast<int>(m_.topology.size()) - 1;
  }

  void he_uniform(const std::string& name, Shape shape, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor w(std::move(shape));
    for (auto& v : w.data()) v = dist(rng_);
    m_.params.add(name, std::move(w));
  }

  Model& m_;
  std::mt19937_64 rng_;
};

// conv64 -> conv128 -> conv256, each conv->BN->relu. Returns the last index.
int conv_block(Builder& b, const std::string& prefix, std::vector<int> inputs, std::size_t cin,
               const std::array<std::size_t, 3>& w) {
  int x = b.conv(prefix + ".conv1", std::move(inputs), cin, w[0], 3, Layer::Kind::conv_bn_relu);
  x = b.conv(prefix + ".conv2", {x}, w[0], w[1], 3, Layer::Kind::conv_bn_relu);
  return b.conv(prefix + ".conv3", {x}, w[1], w[2], 3, Layer::Kind::conv_bn_relu);
}

}  // namespace

Model build_model(const ModelSpec& spec) {
  spec.validate();
  Model m;
  m.spec = spec;
  m.optimizer.lr = spec.lr;
  Builder b(m);
  const auto& w = spec.widths;
  const std::size_t cin = spec.in_channels;
  switch (spec.family) {
    case Family::fully_connected: {
      int x = b.op(Layer::Kind::flatten, "flatten", {-1});
      x = b.dense("fc1", x, cin * kGridCells, spec.fc_hidden, Activation::relu);
      x = b.dense("fc2", x, spec.fc_hidden, kGridCells, Activation::linear);
      b.op(Layer::Kind::to_grid, "to_grid", {x});
      break;
    }
    case Family::full_bn: {
      int x = -1;
      std::size_t c = cin;
      for (int j = 1; j <= spec.depth; ++j) {
        x = conv_block(b, "block" + std::to_string(j), {x}, c, w);
        c = w[2];
      }
      b.conv("head", {x}, c, 1, 3, Layer::Kind::conv);
      break;
    }
    case Family::residual: {
      // Block 1's skip path is a 1x1 projection to w3 channels; later skips
      // are identities. A 1x1 bottleneck (w3 -> w1, BN, relu) precedes the head.
      int x = -1;
      std::size_t c = cin;
      for (int j = 1; j <= spec.depth; ++j) {
        const std::string p = "block" + std::to_string(j);
        int skip = x;
        if (j == 1) skip = b.conv(p + ".proj", {x}, c, w[2], 1, Layer::Kind::conv);
        const int body = conv_block(b, p, {x}, c, w);
        x = b.op(Layer::Kind::add, p + ".add", {body, skip});
        c = w[2];
      }
      x = b.conv("bottleneck", {x}, w[2], w[0], 1, Layer::Kind::conv_bn_relu);
      b.conv("head", {x}, w[0], 1, 3, Layer::Kind::conv);
      break;
    }
    case Family::cascade: {
      // Block j sees concat(raw input, outputs of blocks 1..j-1); the head
      // sees concat(raw input, all block outputs).
      std::vector<int> feeds{-1};
      std::size_t c = cin;
      for (int j = 1; j <= spec.depth; ++j) {
        const std::string p = "block" + std::to_string(j);
        const int in = feeds.size() == 1 ? -1 : b.op(Layer::Kind::concat, p + ".concat", feeds);
        feeds.push_back(conv_block(b, p, {in}, c, w));
        c += w[2];
      }
      const int in = b.op(Layer::Kind::concat, "head.concat", feeds);
      b.conv("head", {in}, c, 1, 3, Layer::Kind::conv);
      break;
    }
  }
  return m;
}

// ---- forward ------------------------------------------------------------------

namespace {

Var run(Model& m, std::vector<nn::BatchNormState>& bn, nn::Tape& tape, Var x, Mode mode, bool trainable) {
  if (x.value().rank() != 4 || x.value().dim(1) != m.spec.in_channels)
    throw ShapeError("forward: input " + nn::shape_str(x.shape()) + " does not match model " +
                     m.spec.name() + " with " + std::to_string(m.spec.in_channels) + " input channels");
  auto param = [&](const std::string& name) {
    auto& p = m.params.get(name);
    return trainable ? tape.parameter(p) : tape.constant(p.value);
  };
  std::vector<Var> outs;
  outs.reserve(m.topology.size());
  auto in = [&](int i) { return i < 0 ? x : outs[static_cast<std::size_t>(i)]; };
  for (const auto& l : m.topology) {
    switch (l.kind) {
      case Layer::Kind::conv:
        outs.push_back(nn::conv2d(in(l.inputs[0]), param(l.name + ".weight"), param(l.name + ".bias"), l.act));
        break;
      case Layer::Kind::conv_bn_relu: {
        Var y = nn::conv2d(in(l.inputs[0]), param(l.name + ".weight"), param(l.name + ".bias"));
        y = nn::batch_norm(y, param(l.name + ".gamma"), param(l.name + ".beta"),
                           bn[static_cast<std::size_t>(l.bn)], mode);
        outs.push_back(nn::relu(y));
        break;
      }
      case Layer::Kind::dense:
        outs.push_back(nn::dense(in(l.inputs[0]), param(l.name + ".weight"), param(l.name + ".bias"), l.act));
        break;
      case Layer::Kind::add:
        outs.push_back(nn::add(in(l.inputs[0]), in(l.inputs[1])));
        break;
      case Layer::Kind::concat: {
        std::vector<Var> xs;
        for (int i : l.inputs) xs.push_back(in(i));
        outs.push_back(nn::concat_channels(xs));
        break;
      }
      case Layer::Kind::flatten: {
        const Var v = in(l.inputs[0]);
        const auto& s = v.shape();
        outs.push_back(nn::reshape(v, Shape{s[0], s[1] * s[2] * s[3]}));
        break;
      }
      case Layer::Kind::to_grid: {
        const Var v = in(l.inputs[0]);
        outs.push_back(nn::reshape(v, Shape{v.shape()[0], 1, kGridRows, kGridCols}));
        break;
      }
    }
  }
  return outs.back();
}

}  // namespace

Var forward(Model& m, nn::Tape& tape, Var x, Mode mode) {
  return run(m, m.bn_states, tape, x, mode, true);
}

Tensor forward(Model& m, const Tensor& x, Mode mode) {
  nn::Tape tape;
  return run(m, m.bn_states, tape, tape.constant(x), mode, false).value();
}

Tensor infer(const Model& m, const Tensor& x) {
  auto bn = m.bn_states;
  nn::Tape tape;
  return run(const_cast<Model&>(m), bn, tape, tape.constant(x), Mode::infer, false).value();
}

// ---- serialization -------------------------------------------------------------

std::string spec_to_json(const ModelSpec& s) {
  json j = {{"family", to_string(s.family)},
            {"depth", s.depth},
            {"widths", s.widths},
            {"in_channels", s.in_channels},
            {"fc_hidden", s.fc_hidden},
            {"batch_size", s.batch_size},
            {"lr", s.lr},
            {"seed", s.seed}};
  return j.dump();
}

namespace {

ModelSpec spec_from(const json& j) {
  ModelSpec s;
  s.family = parse_family(j.at("family").get<std::string>());
  s.depth = j.at("depth").get<int>();
  s.widths = j.at("widths").get<std::array<std::size_t, 3>>();
  s.in_channels = j.at("in_channels").get<std::size_t>();
  s.fc_hidden = j.at("fc_hidden").get<std::size_t>();
  s.batch_size = j.at("batch_size").get<std::size_t>();
  s.lr = j.at("lr").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.validate();
  return s;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t bytes_hash(const double* p, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(p), n * sizeof(double)), h);
}

struct Blob {
  std::string name;
  const Tensor* tensor;
};

std::vector<Blob> blobs_of(const Model& m) {
  std::vector<Blob> out;
  for (const auto& p : m.params.entries()) out.push_back({p.name, &p.value});
  for (std::size_t i = 0; i < m.bn_states.size(); ++i) {
    out.push_back({m.bn_names[i] + ".running_mean", &m.bn_states[i].running_mean});
    out.push_back({m.bn_names[i] + ".running_var", &m.bn_states[i].running_var});
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> mutable_blobs(Model& m) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& p : m.params.entries()) out.emplace_back(p.name, &p.value);
  for (std::size_t i = 0; i < m.bn_states.size(); ++i) {
    out.emplace_back(m.bn_names[i] + ".running_mean", &m.bn_states[i].running_mean);
    out.emplace_back(m.bn_names[i] + ".running_var", &m.bn_states[i].running_var);
  }
  return out;
}

void write_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

ModelSpec spec_from_json(std::string_view text) { return spec_from(json::parse(text)); }

void save_weights(const Model& m, const std::filesystem::path& dir, const Provenance& prov) {
  std::filesystem::create_directories(dir);
  std::string blob;
  json entries = json::array();
  for (const auto& b : blobs_of(m)) {
    const std::size_t len = b.tensor->size() * sizeof(double);
    entries.push_back({{"name", b.name},
                       {"shape", b.tensor->shape()},
                       {"dtype", "f64le"},
                       {"offset", blob.size()},
                       {"length", len},
                       {"checksum", hex64(bytes_hash(b.tensor->ptr(), b.tensor->size()))}});
    blob.append(reinterpret_cast<const char*>(b.tensor->ptr()), len);
  }
  json manifest = {{"format_version", "1"},
                   {"spec", json::parse(spec_to_json(m.spec))},
                   {"provenance",
                    {{"phase", prov.phase}, {"candidate", prov.candidate}, {"fold", prov.fold}, {"epoch", prov.epoch}}},
                   {"total_length", blob.size()},
                   {"entries", entries}};
  write_atomic(dir / "weights.bin", blob);
  write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

json read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("cannot open " + (dir / "manifest.json").string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  const auto version = j.value("format_version", std::string{});
  if (version != "1") throw DataError("unsupported version '" + version + "'");
  return j;
}

}  // namespace

Provenance load_provenance(const std::filesystem::path& dir) {
  const json p = read_manifest(dir).at("provenance");
  return {p.at("phase").get<std::string>(), p.at("candidate").get<std::string>(), p.at("fold").get<int>(),
          p.at("epoch").get<int>()};
}

Model load_weights(const std::filesystem::path& dir) {
  const json manifest = read_manifest(dir);
  Model m = build_model(spec_from(manifest.at("spec")));

  std::ifstream in(dir / "weights.bin", std::ios::binary);
  if (!in) throw DataError("cannot open " + (dir / "weights.bin").string());
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() != manifest.at("total_length").get<std::size_t>())
    throw DataError("length mismatch: weights.bin has " + std::to_string(blob.size()) + " bytes, manifest expects " +
                    std::to_string(manifest.at("total_length").get<std::size_t>()));

  auto targets = mutable_blobs(m);
  const auto& entries = manifest.at("entries");
  if (entries.size() != targets.size())
    throw DataError("manifest lists " + std::to_string(entries.size()) + " entries, model " + m.spec.name() +
                    " has " + std::to_string(targets.size()));
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& e = entries[i];
    auto& [name, tensor] = targets[i];
    const auto ename = e.at("name").get<std::string>();
    if (ename != name) throw DataError("layer order mismatch: manifest has " + ename + ", model expects " + name);
    if (e.at("dtype") != "f64le") throw DataError("unsupported dtype in " + name);
    if (e.at("shape").get<Shape>() != tensor->shape())
      throw DataError("shape mismatch in " + name + ": manifest " + nn::shape_str(e.at("shape").get<Shape>()) +
                      ", model " + nn::shape_str(tensor->shape()));
    const auto offset = e.at("offset").get<std::size_t>();
    const auto length = e.at("length").get<std::size_t>();
    if (offset != expected_offset || length != tensor->size() * sizeof(double) || offset + length > blob.size())
      throw DataError("length mismatch in " + name);
    std::memcpy(tensor->ptr(), blob.data() + offset, length);
    if (hex64(bytes_hash(tensor->ptr(), tensor->size())) != e.at("checksum").get<std::string>())
      throw DataError("checksum mismatch in " + name);
    expected_offset += length;
  }
  return m;
}

void transfer_weights(const Model& src, Model& dst) {
  if (!src.spec.same_architecture(dst.spec)) {
    std::string diff;
    auto note = [&](bool differs, const char* field) {
      if (differs) diff += diff.empty() ? field : std::string(", ") + field;
    };
    note(src.spec.family != dst.spec.family, "family");
    note(src.spec.depth != dst.spec.depth, "depth");
    note(src.spec.widths != dst.spec.widths, "widths");
    note(src.spec.in_channels != dst.spec.in_channels, "in_channels");
    note(src.spec.fc_hidden != dst.spec.fc_hidden, "fc_hidden");
    throw DataError("transfer_weights: spec mismatch in " + diff);
  }
  for (std::size_t i = 0; i < dst.params.size(); ++i) {
    dst.params.entries()[i].value = src.params.entries()[i].value;
    dst.params.entries()[i].grad.fill(0.0);
  }
  dst.bn_states = src.bn_states;
  dst.optimizer = nn::AdamState{};
  dst.optimizer.lr = dst.spec.lr;
}

std::string weights_hash(const Model& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& b : blobs_of(m)) h = bytes_hash(b.tensor->ptr(), b.tensor->size(), h);
  return hex64(h);
}

}  // namespace hvfcast
