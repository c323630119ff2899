#include "cnorm/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <json.hpp>

#include "cnorm/error.hpp"

namespace cnorm {
namespace {

static_assert(std::endian::native == std::endian::little, "binary checkpoints assume a little-endian host");

constexpr char kMagic[8] = {'C', 'N', 'C', 'K', 'P', 'T', '1', '\0'};

const Tensor& find(const NamedArrays& a, const std::string& name) {
  for (const auto& [n, t] : a)
    if (n == name) return t;
  throw FormatError("checkpoint has no array '" + name + "'");
}

void assign(const NamedArrays& a, const std::string& name, Tensor& into) {
  const Tensor& t = find(a, name);
  if (t.shape() != into.shape())
    throw ShapeError("checkpoint array '" + name + "' is " + shape_string(t.shape()) + ", layer holds " +
                     shape_string(into.shape()));
  into = t;
}

Tensor flags(const std::vector<bool>& v) {
  Tensor t({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i] ? 1.0 : 0.0;
  return t;
}

template <class T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  void raw(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size())
      throw FormatError(path_ + ": truncated at byte offset " + std::to_string(bytes_.size()) + ", missing " +
                        std::to_string(pos_ + n - bytes_.size()) + " bytes");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T get() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

NamedArrays to_arrays(const CnState& s) {
  return {{"gamma", s.gamma},
          {"beta", s.beta},
          {"lambdas", s.lambdas},
          {"running_mean", s.running_mean},
          {"running_var", s.running_var},
          {"initialized", flags(s.initialized)}};
}

NamedArrays to_arrays(const CnxParams& p) {
  return {{"gamma", p.gamma}, {"beta", p.beta}, {"lambdas", p.lambdas}, {"mu", p.mu}, {"log_var", p.log_var}};
}

NamedArrays to_arrays(const AcnParams& p) {
  return {{"gamma", p.gamma}, {"beta", p.beta}, {"logit_lambda", p.logit_lambda}, {"mu", p.mu}, {"log_var", p.log_var}};
}

void from_arrays(const NamedArrays& a, CnState& s) {
  assign(a, "gamma", s.gamma);
  assign(a, "beta", s.beta);
  assign(a, "lambdas", s.lambdas);
  assign(a, "running_mean", s.running_mean);
  assign(a, "running_var", s.running_var);
  Tensor init = flags(s.initialized);
  assign(a, "initialized", init);
  for (std::size_t i = 0; i < init.size(); ++i) s.initialized[i] = init[i] != 0.0;
}

void from_arrays(const NamedArrays& a, CnxParams& p) {
  assign(a, "gamma", p.gamma);
  assign(a, "beta", p.beta);
  assign(a, "lambdas", p.lambdas);
  assign(a, "mu", p.mu);
  assign(a, "log_var", p.log_var);
}

void from_arrays(const NamedArrays& a, AcnParams& p) {
  assign(a, "gamma", p.gamma);
  assign(a, "beta", p.beta);
  assign(a, "logit_lambda", p.logit_lambda);
  assign(a, "mu", p.mu);
  assign(a, "log_var", p.log_var);
}

namespace {

// "Has been populated" flags live outside the tensors; each norm layer gets
// one extra array "<i>.<kind>.populated" so a loaded model can run in eval mode.
std::vector<bool*> populated_flags(Layer* layer, std::vector<bool>*& per_context) {
  per_context = nullptr;
  if (auto* l = dynamic_cast<BnLayer*>(layer)) return {&l->state.initialized};
  if (auto* l = dynamic_cast<ModeNormLayer*>(layer)) return {&l->state.initialized};
  if (auto* l = dynamic_cast<MixNormLayer*>(layer)) return {&l->state.fitted, &l->state.initialized};
  if (auto* l = dynamic_cast<CnLayer*>(layer)) per_context = &l->state.initialized;
  return {};
}

}  // namespace

NamedArrays model_arrays(Model& m) {
  NamedArrays out;
  for (const auto& p : m.params()) out.emplace_back(p.name, *p.value);
  for (const auto& [name, t] : m.buffers()) out.emplace_back(name, *t);
  const auto layers = m.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    std::vector<bool>* ctx = nullptr;
    const auto single = populated_flags(layers[i], ctx);
    std::vector<bool> v = ctx ? *ctx : std::vector<bool>();
    for (bool* f : single) v.push_back(*f);
    if (!v.empty()) out.emplace_back(std::to_string(i) + "." + layers[i]->kind() + ".populated", flags(v));
  }
  return out;
}

void load_model_arrays(Model& m, const NamedArrays& a) {
  for (const auto& p : m.params()) assign(a, p.name, *p.value);
  for (const auto& [name, t] : m.buffers()) assign(a, name, *t);
  const auto layers = m.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    std::vector<bool>* ctx = nullptr;
    const auto single = populated_flags(layers[i], ctx);
    const std::size_t count = (ctx ? ctx->size() : 0) + single.size();
    if (count == 0) continue;
    Tensor f({count});
    assign(a, std::to_string(i) + "." + layers[i]->kind() + ".populated", f);
    std::size_t at = 0;
    if (ctx)
      for (std::size_t j = 0; j < ctx->size(); ++j) (*ctx)[j] = f[at++] != 0.0;
    for (bool* flag : single) *flag = f[at++] != 0.0;
  }
  m.mark_trained();
}

void write_checkpoint_binary(const std::string& path, const NamedArrays& a) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(out, a.size());
  for (const auto& [name, t] : a) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

NamedArrays read_checkpoint_binary(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError(path + ": bad magic at byte offset 0");
  const auto count = r.get<std::uint64_t>();
  NamedArrays out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    std::string name(len, '\0');
    r.raw(name.data(), len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError(path + ": implausible rank at byte offset " + std::to_string(r.offset() - 4));
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    std::vector<double> data(shape_size(shape));
    r.raw(data.data(), data.size() * sizeof(double));
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw FormatError(path + ": trailing bytes after offset " + std::to_string(r.offset()));
  return out;
}

void write_checkpoint_json(const std::string& path, const NamedArrays& a) {
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& [name, t] : a) {
    if (!t.all_finite()) throw NumericError("checkpoint array '" + name + "' is not finite; JSON cannot hold it");
    arrays.push_back({{"name", name}, {"shape", t.shape()}, {"data", t.storage()}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out << nlohmann::json{{"format", "cnorm-checkpoint"}, {"version", 1}, {"arrays", arrays}}.dump(1) << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

NamedArrays read_checkpoint_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  NamedArrays out;
  try {
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "cnorm-checkpoint") throw FormatError(path + ": not a cnorm checkpoint");
    for (const auto& e : j.at("arrays")) {
      Shape shape = e.at("shape").get<Shape>();
      std::vector<double> data = e.at("data").get<std::vector<double>>();
      out.emplace_back(e.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return out;
}

}  // namespace cnorm
