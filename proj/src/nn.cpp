#include "ptadet/nn.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ptadet/errors.hpp"

namespace ptadet {

Linear Linear::init(std::size_t c_in, std::size_t c_out, Rng& rng, bool with_bias) {
  const double bound = std::sqrt(1.0 / static_cast<double>(c_in));
  Linear l;
  l.weight = Tensor::uniform({c_in, c_out}, bound, rng, true);
  if (with_bias) l.bias = Tensor::uniform({c_out}, bound, rng, true);
  return l;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

Tensor linear(const Tensor& x, const Linear& layer) {
  if (x.rank() != 2 || x.dim(1) != layer.in_features())
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(layer.weight.shape()));
  Tensor y = matmul(x, layer.weight);
  return layer.bias.defined() ? add_bias(y, layer.bias) : y;
}

Mlp2 Mlp2::init(std::size_t c_in, std::size_t c_hidden, std::size_t c_out, Rng& rng) {
  Mlp2 net;
  net.first = Linear::init(c_in, c_hidden, rng);
  net.second = Linear::init(c_hidden, c_out, rng);
  return net;
}

void Mlp2::collect(const std::string& prefix, ParamList& out) const {
  first.collect(prefix + ".0", out);
  second.collect(prefix + ".1", out);
}

Tensor mlp2(const Tensor& x, const Mlp2& net) { return linear(relu(linear(x, net.first)), net.second); }

LbrLayer LbrLayer::init(std::size_t c_in, std::size_t c_out, Rng& rng, NormMode mode) {
  const double bound = std::sqrt(1.0 / static_cast<double>(c_in));
  LbrLayer l;
  l.weight = Tensor::uniform({c_in, c_out}, bound, rng, true);
  if (mode == NormMode::kIdentity) l.bias = Tensor::uniform({c_out}, bound, rng, true);
  l.norm_scale = Tensor::full({c_out}, 1.0, true);
  l.norm_shift = Tensor::zeros({c_out}, true);
  l.norm_mode = mode;
  return l;
}

void LbrLayer::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
  out.emplace_back(prefix + ".norm_scale", norm_scale);
  out.emplace_back(prefix + ".norm_shift", norm_shift);
}

Tensor linear(const Tensor& x, const LbrLayer& layer) {
  if (x.rank() != 2 || x.dim(1) != layer.in_features())
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(layer.weight.shape()));
  Tensor y = matmul(x, layer.weight);
  return layer.bias.defined() ? add_bias(y, layer.bias) : y;
}

Tensor lbr(const Tensor& x, const LbrLayer& layer) {
  if (x.rank() == 2 && x.dim(0) == 0) throw ContractError("lbr: empty input");
  Tensor y = linear(x, layer);
  if (layer.norm_mode == NormMode::kStandardize) y = standardize_cols(y, kNormEps);
  return relu(add_bias(mul_cols(y, layer.norm_scale), layer.norm_shift));
}

// ---- Adam -------------------------------------------------------------------

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::int64_t step, const AdamOptions& opt) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    throw DimensionError("adam_update: state shapes do not match parameter");
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + opt.weight_decay * param[i];
    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
}

Adam::Adam(ParamList params, AdamOptions options) : params_(std::move(params)), opt_(options) {
  for (auto& [name, t] : params_) {
    if (!t.requires_grad()) throw ContractError("Adam: parameter " + name + " does not require grad");
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].second;
    adam_update(t.mutable_data(), t.grad(), m_[i], v_[i], t_, opt_);
  }
}

void Adam::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'T', 'A', 'D', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::string& buf, T value) {
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  buf.append(reinterpret_cast<const char*>(bits.data()), bits.size());
}

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

  template <typename T>
  T get(const char* what) {
    std::array<unsigned char, sizeof(T)> bits;
    need(sizeof(T), what);
    std::memcpy(bits.data(), buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    return std::bit_cast<T>(bits);
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (buf_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  std::string buf(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(buf, kCheckpointVersion);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_le<std::uint64_t>(buf, e);
    for (double v : t.data()) put_le<double>(buf, v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::map<std::string, Tensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  if (r.bytes(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) throw FormatError("bad checkpoint magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("count");
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("name length");
    std::string name = r.bytes(len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw FormatError("implausible rank for " + name);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("extent")));
    const std::size_t n = shape_numel(shape);
    if (n == 0 || n > (std::size_t{1} << 32)) throw FormatError("implausible extents for " + name);
    std::vector<double> values(n);
    for (double& v : values) v = r.get<double>("payload");
    try {
      out.emplace(name, Tensor::from(std::move(shape), std::move(values)));
    } catch (const NumericError&) {
      throw FormatError("non-finite payload in " + name);
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint payload");
  return out;
}

void load_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  auto stored = read_checkpoint(path);
  for (const auto& [name, t] : params) {
    auto it = stored.find(name);
    if (it == stored.end()) throw FormatError("checkpoint missing tensor " + name);
    if (it->second.shape() != t.shape())
      throw FormatError("checkpoint shape mismatch for " + name + ": " + shape_str(it->second.shape()) + " vs " +
                        shape_str(t.shape()));
    auto src = it->second.data();
    Tensor dst = t;
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

// ---- gradcheck --------------------------------------------------------------

std::vector<GradcheckResult> gradcheck(const std::function<Tensor()>& loss_fn, const ParamList& params,
                                       const GradcheckOptions& options) {
  for (const auto& [name, t] : params) Tensor(t).zero_grad();
  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& [name, t] : params) analytic.emplace_back(t.grad().begin(), t.grad().end());

  std::vector<GradcheckResult> results;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    auto data = t.mutable_data();
    const std::size_t n = data.size();
    const std::size_t stride = (options.max_entries == 0 || n <= options.max_entries) ? 1 : (n + options.max_entries - 1) / options.max_entries;
    GradcheckResult res{params[p].first};
    double max_a = 0.0, max_n = 0.0;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = data[i];
      data[i] = saved + options.step;
      const double up = loss_fn().item();
      data[i] = saved - options.step;
      const double down = loss_fn().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[p][i];
      res.max_abs_err = std::max(res.max_abs_err, std::abs(a - numeric));
      max_a = std::max(max_a, std::abs(a));
      max_n = std::max(max_n, std::abs(numeric));
      ++res.checked;
    }
    res.max_rel_err = res.max_abs_err / std::max({max_a, max_n, options.floor});
    results.push_back(res);
  }
  return results;
}

}  // namespace ptadet
