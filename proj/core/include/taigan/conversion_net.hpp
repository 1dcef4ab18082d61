#pragma once

// Frame-conversion networks: a 3-D U-Net generator whose bottleneck is
// modulated by FiLM parameters from a temporal encoder (LSTM, 1-D conv,
// linear), and a PatchGAN discriminator emitting one logit per receptive
// field. All tensors are (batch, channel, z, y, x).

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "taigan/nn.hpp"
#include "taigan/preprocess.hpp"
#include "taigan/volume.hpp"

namespace taigan {

struct GeneratorConfig {
  int levels = 4;         // resolution levels; levels - 1 stride-2 downsamplings
  int base_channels = 8;  // channels at full resolution, doubling per level
  int mask_channels = 1;  // 0 (no anatomy), 1 (coded) or 3 (one-hot)
  bool use_film = true;

  int input_channels() const { return 1 + mask_channels; }
  int channels_at(int level) const { return base_channels << level; }
  int bottleneck_channels() const { return channels_at(levels - 1); }
  void validate() const;
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct TemporalEncoderConfig {
  int steps = 27;  // sequence length T
  int hidden = 16;
  int conv_channels = 8;
  int conv_kernel = 3;
  int output_size = 0;  // 2 * generator bottleneck channels
  bool identity_init = true;  // zero final weights, gamma bias 1: FiLM starts as identity

  void validate() const;
  friend bool operator==(const TemporalEncoderConfig&, const TemporalEncoderConfig&) = default;
};

struct DiscriminatorConfig {
  int input_channels = 1;
  int base_channels = 8;
  int levels = 3;  // stride-2 encoding levels before the per-position linear layer

  void validate() const;
  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

using NamedParams = std::vector<std::pair<std::string, nn::Var>>;

class Generator {
 public:
  Generator(const GeneratorConfig& config, Rng& rng);
  /// input: (N, input_channels, Z, Y, X). gamma/beta: (N, bottleneck) or null when FiLM is off.
  nn::Var forward(const nn::Var& input, const nn::Var& gamma = nullptr, const nn::Var& beta = nullptr) const;
  const GeneratorConfig& config() const { return config_; }
  const NamedParams& params() const { return params_; }

 private:
  struct Conv {
    nn::Var w, b;
  };
  Conv make_conv(const std::string& name, int ci, int co, int k, Rng& rng);
  GeneratorConfig config_;
  std::vector<Conv> enc_, dec_;
  Conv out_;
  NamedParams params_;
};

class TemporalEncoder {
 public:
  TemporalEncoder(const TemporalEncoderConfig& config, Rng& rng);
  /// One conditioning sequence per batch item; returns (gamma, beta), each (N, output_size / 2).
  std::pair<nn::Var, nn::Var> forward(const std::vector<TemporalConditioning>& batch) const;
  const TemporalEncoderConfig& config() const { return config_; }
  const NamedParams& params() const { return params_; }

 private:
  TemporalEncoderConfig config_;
  nn::Var w_ih_, w_hh_, b_lstm_, conv_w_, conv_b_, out_w_, out_b_;
  NamedParams params_;
};

class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, Rng& rng);
  /// Logit map (N, 1, z', y', x'); each entry scores one receptive-field patch.
  nn::Var forward(const nn::Var& image) const;
  const DiscriminatorConfig& config() const { return config_; }
  const NamedParams& params() const { return params_; }

 private:
  DiscriminatorConfig config_;
  std::vector<std::pair<nn::Var, nn::Var>> convs_;
  nn::Var head_w_, head_b_;
  NamedParams params_;
};

struct ModelBundle {
  GeneratorConfig generator_config;
  TemporalEncoderConfig temporal_config;
  DiscriminatorConfig discriminator_config;
  std::optional<Generator> generator;
  std::optional<TemporalEncoder> temporal;  // present iff generator uses FiLM
  std::optional<Discriminator> discriminator;
  std::map<std::string, std::string> metadata;  // seed, epoch, fold, variant, ...

  static ModelBundle create(const GeneratorConfig& g, const TemporalEncoderConfig& t, const DiscriminatorConfig& d,
                            std::uint64_t seed);
  /// All parameters in checkpoint order.
  NamedParams all_params() const;
  NamedParams generator_side_params() const;  // generator + temporal encoder
};

/// Versioned checkpoint: text header (architecture, metadata, parameter table)
/// followed by float64 little-endian parameter data. Written atomically.
void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

/// Per-channel affine map of a (C, Z, Y, X) feature map (batch 1).
nn::Tensor film_modulate(const nn::Tensor& feature_map, const std::vector<double>& gamma, const std::vector<double>& beta);

/// Inference-mode (gamma, beta) for one conditioning sequence.
std::pair<std::vector<double>, std::vector<double>> encode_temporal(const TemporalEncoder& encoder,
                                                                   const TemporalConditioning& conditioning);

/// Stacks a frame and its mask channels into a (1, C, Z, Y, X) tensor.
nn::Tensor make_input_tensor(const Volume& frame, const std::vector<Volume>& mask_channels);
Volume tensor_to_volume(const nn::Tensor& t, int batch_index = 0, int channel = 0);

/// Inference: converted patch in [-1, 1] with the input's spatial shape.
Volume generate(const ModelBundle& model, const Volume& early, const std::vector<Volume>& mask_channels,
                const TemporalConditioning* conditioning);

/// Mean squared voxel difference.
double mse_loss(const Volume& converted, const Volume& reference);

enum class AdversarialVariant { kNonSaturating, kMinimax };

struct AdversarialLosses {
  double discriminator = 0;
  double generator = 0;
};

/// Discriminator probabilities in (0, 1). d = mean(-log D(real)) + mean(-log(1 - D(fake)));
/// g = mean(-log D(fake)) (non-saturating) or mean(log(1 - D(fake))) (minimax).
/// Probabilities are clamped to [eps, 1 - eps].
AdversarialLosses adversarial_losses(const std::vector<double>& real, const std::vector<double>& fake,
                                     AdversarialVariant variant = AdversarialVariant::kNonSaturating,
                                     double eps = 1e-7);

}  // namespace taigan
