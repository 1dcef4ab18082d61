#include "taigan/conversion_net.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>

#include "taigan/text_io.hpp"

namespace taigan {

using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

Var he_conv(int co, int ci, int kz, int ky, int kx, Rng& rng) {
  const double fan_in = static_cast<double>(ci) * kz * ky * kx;
  return nn::parameter(nn::random_normal(Shape{co, ci, kz, ky, kx}, rng, std::sqrt(2.0 / fan_in)));
}

Var zeros_param(int n) { return nn::parameter(Tensor(Shape{1, n, 1, 1, 1})); }

nn::Conv3dOptions same3(int stride) { return {{stride, stride, stride}, {1, 1, 1}}; }

}  // namespace

void GeneratorConfig::validate() const {
  if (levels < 2) throw ValidationError("generator needs at least two levels");
  if (base_channels < 1) throw ValidationError("base_channels must be positive");
  if (mask_channels != 0 && mask_channels != 1 && mask_channels != 3)
    throw ValidationError("mask_channels must be 0, 1 or 3");
}

void TemporalEncoderConfig::validate() const {
  if (steps < 1 || hidden < 1 || conv_channels < 1) throw ValidationError("temporal encoder sizes must be positive");
  if (conv_kernel < 1 || conv_kernel % 2 == 0) throw ValidationError("temporal conv kernel must be odd");
  if (output_size < 2 || output_size % 2) throw ValidationError("temporal output size must be a positive even number");
}

void DiscriminatorConfig::validate() const {
  if (input_channels < 1 || base_channels < 1 || levels < 1) throw ValidationError("discriminator sizes must be positive");
}

Generator::Conv Generator::make_conv(const std::string& name, int ci, int co, int k, Rng& rng) {
  Conv c{he_conv(co, ci, k, k, k, rng), zeros_param(co)};
  params_.emplace_back(name + ".w", c.w);
  params_.emplace_back(name + ".b", c.b);
  return c;
}

Generator::Generator(const GeneratorConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  int in = config_.input_channels();
  for (int l = 0; l < config_.levels; ++l) {
    enc_.push_back(make_conv("generator.enc" + std::to_string(l), in, config_.channels_at(l), 3, rng));
    in = config_.channels_at(l);
  }
  dec_.resize(static_cast<std::size_t>(config_.levels - 1));
  for (int l = config_.levels - 2; l >= 0; --l) {
    dec_[l] = make_conv("generator.dec" + std::to_string(l), config_.channels_at(l + 1) + config_.channels_at(l),
                        config_.channels_at(l), 3, rng);
  }
  out_ = make_conv("generator.out", config_.channels_at(0), 1, 1, rng);
}

Var Generator::forward(const Var& input, const Var& gamma, const Var& beta) const {
  if (input->shape().c != config_.input_channels())
    throw ValidationError("generator expects " + std::to_string(config_.input_channels()) + " input channels, got " +
                          std::to_string(input->shape().c));
  if (config_.use_film && (!gamma || !beta)) throw ValidationError("FiLM generator needs gamma and beta");
  std::vector<Var> skips;
  Var x = input;
  for (int l = 0; l < config_.levels; ++l) {
    Var h = nn::conv3d(x, enc_[l].w, enc_[l].b, same3(l == 0 ? 1 : 2));
    if (l < config_.levels - 1) {
      h = nn::leaky_relu(nn::instance_norm(h));
      skips.push_back(h);
    } else {
      h = nn::leaky_relu(h);
      if (config_.use_film) h = nn::film(h, gamma, beta);
    }
    x = h;
  }
  for (int l = config_.levels - 2; l >= 0; --l) {
    const Shape& s = skips[l]->shape();
    Var up = nn::upsample_nearest(x, s.z, s.y, s.x);
    x = nn::relu(nn::instance_norm(nn::conv3d(nn::concat_channels(up, skips[l]), dec_[l].w, dec_[l].b, same3(1))));
  }
  return nn::tanh(nn::conv3d(x, out_.w, out_.b, {}));
}

TemporalEncoder::TemporalEncoder(const TemporalEncoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int H = config_.hidden;
  const double r = 1.0 / std::sqrt(static_cast<double>(H));
  auto uniform = [&](Shape s) {
    Tensor t(s);
    for (auto& v : t.data) v = rng.uniform(-r, r);
    return t;
  };
  w_ih_ = nn::parameter(uniform(Shape{4 * H, static_cast<int>(TemporalConditioning::kFeatures), 1, 1, 1}));
  w_hh_ = nn::parameter(uniform(Shape{4 * H, H, 1, 1, 1}));
  Tensor b(Shape{1, 4 * H, 1, 1, 1});
  for (int i = H; i < 2 * H; ++i) b.data[i] = 1.0;  // forget gate
  b_lstm_ = nn::parameter(std::move(b));
  conv_w_ = he_conv(config_.conv_channels, H, config_.conv_kernel, 1, 1, rng);
  conv_b_ = zeros_param(config_.conv_channels);
  const int flat = config_.conv_channels * config_.steps;
  const int half = config_.output_size / 2;
  if (config_.identity_init) {
    out_w_ = nn::parameter(Tensor(Shape{config_.output_size, flat, 1, 1, 1}));
    Tensor ob(Shape{1, config_.output_size, 1, 1, 1});
    for (int i = 0; i < half; ++i) ob.data[i] = 1.0;
    out_b_ = nn::parameter(std::move(ob));
  } else {
    out_w_ = nn::parameter(nn::random_normal(Shape{config_.output_size, flat, 1, 1, 1}, rng, 1.0 / std::sqrt(flat)));
    out_b_ = nn::parameter(nn::random_normal(Shape{1, config_.output_size, 1, 1, 1}, rng, 0.1));
  }
  params_ = {{"temporal.w_ih", w_ih_},   {"temporal.w_hh", w_hh_}, {"temporal.b", b_lstm_}, {"temporal.conv.w", conv_w_},
             {"temporal.conv.b", conv_b_}, {"temporal.out.w", out_w_}, {"temporal.out.b", out_b_}};
}

std::pair<Var, Var> TemporalEncoder::forward(const std::vector<TemporalConditioning>& batch) const {
  if (batch.empty()) throw ValidationError("empty conditioning batch");
  const int N = static_cast<int>(batch.size());
  const int T = config_.steps;
  const int H = config_.hidden;
  constexpr int F = static_cast<int>(TemporalConditioning::kFeatures);
  for (const auto& c : batch) {
    if (static_cast<int>(c.steps) != T || c.values.size() != static_cast<std::size_t>(T) * F)
      throw ValidationError("conditioning length does not match the temporal encoder (" + std::to_string(T) + " steps)");
    for (double v : c.values)
      if (!std::isfinite(v)) throw ValidationError("non-finite value in temporal conditioning");
  }
  Var h = nn::constant(Tensor(Shape{N, H, 1, 1, 1}));
  Var c = nn::constant(Tensor(Shape{N, H, 1, 1, 1}));
  std::vector<Var> hs;
  for (int t = 0; t < T; ++t) {
    Tensor xt(Shape{N, F, 1, 1, 1});
    for (int n = 0; n < N; ++n)
      for (int f = 0; f < F; ++f) xt.data[static_cast<std::size_t>(n) * F + f] = batch[n].at(t, f);
    Var gates = nn::add(nn::linear(nn::constant(std::move(xt)), w_ih_, b_lstm_), nn::linear(h, w_hh_, nullptr));
    Var i = nn::sigmoid(nn::slice_channels(gates, 0, H));
    Var f = nn::sigmoid(nn::slice_channels(gates, H, H));
    Var g = nn::tanh(nn::slice_channels(gates, 2 * H, H));
    Var o = nn::sigmoid(nn::slice_channels(gates, 3 * H, H));
    c = nn::add(nn::mul(f, c), nn::mul(i, g));
    h = nn::mul(o, nn::tanh(c));
    hs.push_back(h);
  }
  Var seq = nn::stack_z(hs);
  const int pad = config_.conv_kernel / 2;
  Var conv = nn::leaky_relu(nn::conv3d(seq, conv_w_, conv_b_, {{1, 1, 1}, {pad, 0, 0}}));
  Var out = nn::linear(nn::flatten(conv), out_w_, out_b_);
  const int half = config_.output_size / 2;
  return {nn::slice_channels(out, 0, half), nn::slice_channels(out, half, half)};
}

Discriminator::Discriminator(const DiscriminatorConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  int in = config_.input_channels;
  for (int l = 0; l < config_.levels; ++l) {
    const int co = config_.base_channels << l;
    convs_.emplace_back(he_conv(co, in, 3, 3, 3, rng), zeros_param(co));
    params_.emplace_back("discriminator.conv" + std::to_string(l) + ".w", convs_.back().first);
    params_.emplace_back("discriminator.conv" + std::to_string(l) + ".b", convs_.back().second);
    in = co;
  }
  head_w_ = he_conv(1, in, 1, 1, 1, rng);
  head_b_ = zeros_param(1);
  params_.emplace_back("discriminator.head.w", head_w_);
  params_.emplace_back("discriminator.head.b", head_b_);
}

Var Discriminator::forward(const Var& image) const {
  if (image->shape().c != config_.input_channels) throw ValidationError("discriminator input channel mismatch");
  Var x = image;
  for (const auto& [w, b] : convs_) x = nn::leaky_relu(nn::conv3d(x, w, b, same3(2)));
  return nn::conv3d(x, head_w_, head_b_, {});
}

ModelBundle ModelBundle::create(const GeneratorConfig& g, const TemporalEncoderConfig& t, const DiscriminatorConfig& d,
                                std::uint64_t seed) {
  ModelBundle b;
  b.generator_config = g;
  b.temporal_config = t;
  b.temporal_config.output_size = 2 * g.bottleneck_channels();
  b.discriminator_config = d;
  Rng rg(derive_seed(seed, 1)), rt(derive_seed(seed, 2)), rd(derive_seed(seed, 3));
  b.generator.emplace(g, rg);
  if (g.use_film) b.temporal.emplace(b.temporal_config, rt);
  b.discriminator.emplace(d, rd);
  b.metadata["seed"] = std::to_string(seed);
  return b;
}

NamedParams ModelBundle::generator_side_params() const {
  NamedParams p = generator->params();
  if (temporal) p.insert(p.end(), temporal->params().begin(), temporal->params().end());
  return p;
}

NamedParams ModelBundle::all_params() const {
  NamedParams p = generator_side_params();
  p.insert(p.end(), discriminator->params().begin(), discriminator->params().end());
  return p;
}

namespace {

constexpr const char* kEndHeader = "end_header\n";

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-')) return false;
  return true;
}

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path) {
  KeyValueWriter w;
  w.put("format", "taigan-model");
  w.put("version", 1);
  w.put("payload", "float64-le");
  w.section("generator");
  const auto& g = bundle.generator_config;
  w.put("levels", g.levels);
  w.put("base_channels", g.base_channels);
  w.put("mask_channels", g.mask_channels);
  w.put("use_film", g.use_film);
  w.section("temporal");
  const auto& t = bundle.temporal_config;
  w.put("steps", t.steps);
  w.put("hidden", t.hidden);
  w.put("conv_channels", t.conv_channels);
  w.put("conv_kernel", t.conv_kernel);
  w.put("output_size", t.output_size);
  w.put("identity_init", t.identity_init);
  w.section("discriminator");
  const auto& d = bundle.discriminator_config;
  w.put("input_channels", d.input_channels);
  w.put("base_channels", d.base_channels);
  w.put("levels", d.levels);
  w.section("metadata");
  for (const auto& [k, v] : bundle.metadata) {
    if (!valid_key(k)) throw ValidationError("invalid metadata key '" + k + "'");
    if (v.find('\n') != std::string::npos) throw ValidationError("metadata value for '" + k + "' contains a newline");
    w.put(k, v);
  }
  w.section("params");
  const auto params = bundle.all_params();
  std::size_t total = 0;
  for (const auto& [name, var] : params) {
    const auto& s = var->shape();
    w.put(name, std::vector<int>{s.n, s.c, s.z, s.y, s.x});
    total += var->value.numel();
  }
  std::string bytes = w.str() + kEndHeader;
  std::size_t pos = bytes.size();
  bytes.resize(pos + total * sizeof(double));
  for (const auto& [name, var] : params)
    for (double v : var->value.data) {
      std::uint64_t u = std::bit_cast<std::uint64_t>(v);
      if constexpr (std::endian::native != std::endian::little) u = __builtin_bswap64(u);
      std::memcpy(bytes.data() + pos, &u, sizeof u);
      pos += sizeof u;
    }
  write_text_atomic(path, bytes);
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_text(path);
  const auto end = bytes.find(kEndHeader);
  if (end == std::string::npos) throw ParseError("end_header", "missing header terminator in " + path.string());
  const auto kv = KeyValueReader::parse(std::string_view(bytes).substr(0, end), path.string());
  if (!kv.has("format") || kv.get_string("format") != "taigan-model")
    throw ParseError("format", "not a model checkpoint: " + path.string());
  if (kv.get_int("version") != 1) throw ParseError("version", "unsupported checkpoint version");
  if (kv.get_string("payload") != "float64-le") throw ParseError("payload", "unsupported payload encoding");
  GeneratorConfig g;
  g.levels = static_cast<int>(kv.get_int("generator.levels"));
  g.base_channels = static_cast<int>(kv.get_int("generator.base_channels"));
  g.mask_channels = static_cast<int>(kv.get_int("generator.mask_channels"));
  g.use_film = kv.get_bool("generator.use_film");
  TemporalEncoderConfig t;
  t.steps = static_cast<int>(kv.get_int("temporal.steps"));
  t.hidden = static_cast<int>(kv.get_int("temporal.hidden"));
  t.conv_channels = static_cast<int>(kv.get_int("temporal.conv_channels"));
  t.conv_kernel = static_cast<int>(kv.get_int("temporal.conv_kernel"));
  t.output_size = static_cast<int>(kv.get_int("temporal.output_size"));
  t.identity_init = kv.get_bool("temporal.identity_init");
  DiscriminatorConfig d;
  d.input_channels = static_cast<int>(kv.get_int("discriminator.input_channels"));
  d.base_channels = static_cast<int>(kv.get_int("discriminator.base_channels"));
  d.levels = static_cast<int>(kv.get_int("discriminator.levels"));
  ModelBundle b;
  try {
    b = ModelBundle::create(g, t, d, 0);
  } catch (const ValidationError& e) {
    throw ParseError("architecture", e.what());
  }
  b.metadata.clear();
  std::vector<std::string> param_keys;
  for (const auto& k : kv.keys()) {
    if (k.rfind("metadata.", 0) == 0) b.metadata[k.substr(9)] = kv.get_string(k);
    if (k.rfind("params.", 0) == 0) param_keys.push_back(k);
  }
  const auto params = b.all_params();
  if (param_keys.size() != params.size()) throw ParseError("params", "parameter count does not match the architecture");
  std::size_t pos = end + std::strlen(kEndHeader);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, var] = params[i];
    if (param_keys[i] != "params." + name) throw ParseError(param_keys[i], "expected parameter '" + name + "'");
    const auto shape = kv.get_ints(param_keys[i]);
    const auto& s = var->shape();
    if (shape != std::vector<int>{s.n, s.c, s.z, s.y, s.x}) throw ParseError(param_keys[i], "shape mismatch");
    const std::size_t n = var->value.numel();
    if (bytes.size() < pos + n * sizeof(double)) throw ParseError("payload", "truncated parameter data");
    for (std::size_t j = 0; j < n; ++j) {
      std::uint64_t u;
      std::memcpy(&u, bytes.data() + pos, sizeof u);
      if constexpr (std::endian::native != std::endian::little) u = __builtin_bswap64(u);
      var->value.data[j] = std::bit_cast<double>(u);
      pos += sizeof u;
    }
  }
  if (pos != bytes.size()) throw ParseError("payload", "trailing bytes after parameter data");
  return b;
}

Tensor film_modulate(const Tensor& feature_map, const std::vector<double>& gamma, const std::vector<double>& beta) {
  const Shape s = feature_map.shape;
  if (s.n != 1) throw ValidationError("film_modulate expects a single feature map");
  if (gamma.size() != static_cast<std::size_t>(s.c) || beta.size() != static_cast<std::size_t>(s.c))
    throw ValidationError("gamma/beta length must equal the channel count");
  Tensor out(s);
  const std::size_t sp = s.spatial();
  for (int c = 0; c < s.c; ++c)
    for (std::size_t i = 0; i < sp; ++i) out.data[c * sp + i] = gamma[c] * feature_map.data[c * sp + i] + beta[c];
  return out;
}

std::pair<std::vector<double>, std::vector<double>> encode_temporal(const TemporalEncoder& encoder,
                                                                   const TemporalConditioning& conditioning) {
  nn::NoGradGuard guard;
  auto [g, b] = encoder.forward({conditioning});
  return {g->value.data, b->value.data};
}

Tensor make_input_tensor(const Volume& frame, const std::vector<Volume>& mask_channels) {
  const Index3 d = frame.dims();
  const int C = 1 + static_cast<int>(mask_channels.size());
  Tensor t(Shape{1, C, d.z, d.y, d.x});
  const std::size_t sp = frame.size();
  for (std::size_t i = 0; i < sp; ++i) t.data[i] = frame[i];
  for (int c = 1; c < C; ++c) {
    const Volume& m = mask_channels[c - 1];
    if (m.dims() != d) throw ValidationError("mask channel shape does not match the frame");
    for (std::size_t i = 0; i < sp; ++i) t.data[c * sp + i] = m[i];
  }
  return t;
}

Volume tensor_to_volume(const Tensor& t, int batch_index, int channel) {
  const Shape s = t.shape;
  Volume v(Index3{s.x, s.y, s.z});
  const std::size_t sp = s.spatial();
  const std::size_t off = (static_cast<std::size_t>(batch_index) * s.c + channel) * sp;
  for (std::size_t i = 0; i < sp; ++i) v[i] = static_cast<float>(t.data[off + i]);
  return v;
}

Volume generate(const ModelBundle& model, const Volume& early, const std::vector<Volume>& mask_channels,
                const TemporalConditioning* conditioning) {
  const auto& cfg = model.generator_config;
  if (static_cast<int>(mask_channels.size()) != cfg.mask_channels)
    throw ValidationError("generator expects " + std::to_string(cfg.mask_channels) + " mask channels, got " +
                          std::to_string(mask_channels.size()));
  if (early.empty()) throw ValidationError("empty input patch");
  nn::NoGradGuard guard;
  Var input = nn::constant(make_input_tensor(early, mask_channels));
  Var gamma, beta;
  if (cfg.use_film) {
    if (!conditioning) throw ValidationError("FiLM generator needs temporal conditioning");
    std::tie(gamma, beta) = model.temporal->forward({*conditioning});
  }
  return tensor_to_volume(model.generator->forward(input, gamma, beta)->value);
}

double mse_loss(const Volume& converted, const Volume& reference) {
  if (converted.dims() != reference.dims()) throw ValidationError("mse_loss shape mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < converted.size(); ++i) {
    const double d = static_cast<double>(converted[i]) - reference[i];
    acc += d * d;
  }
  return acc / static_cast<double>(converted.size());
}

AdversarialLosses adversarial_losses(const std::vector<double>& real, const std::vector<double>& fake,
                                     AdversarialVariant variant, double eps) {
  if (real.empty() || fake.empty()) throw ValidationError("adversarial_losses needs scores");
  auto clamp = [eps](double p) { return std::clamp(p, eps, 1.0 - eps); };
  double lr = 0, lf = 0, g = 0;
  for (double p : real) lr -= std::log(clamp(p));
  for (double p : fake) {
    lf -= std::log(1.0 - clamp(p));
    g += variant == AdversarialVariant::kNonSaturating ? -std::log(clamp(p)) : std::log(1.0 - clamp(p));
  }
  return {lr / static_cast<double>(real.size()) + lf / static_cast<double>(fake.size()),
          g / static_cast<double>(fake.size())};
}

}  // namespace taigan
