#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ace/latent.hpp"
#include "ace/layers.hpp"
#include "ace/optim.hpp"
#include "ace/rng.hpp"
#include "ace/tensor.hpp"
#include "ace/warp.hpp"

namespace ace {

struct EncoderSpec {
  std::vector<std::size_t> conv_channels;  // empty: fully connected encoder
  std::size_t conv_kernel = 5;
  std::vector<std::size_t> fc_sizes = {256};
};

struct DecoderSpec {
  std::vector<std::size_t> fc_sizes = {256};
  std::vector<std::size_t> deconv_channels;  // empty: dense output layer
  std::size_t deconv_kernel = 2;             // stride == kernel, exact upsampling
};

struct ClassifierSpec {
  std::vector<std::size_t> conv_channels = {32, 64, 128};
  std::size_t conv_kernel = 3;
  std::size_t fc_size = 700;
  double dropout_input = 0.2;
  double dropout_hidden = 0.5;
};

struct LocNetSpec {
  std::vector<std::size_t> conv_channels = {20, 20};
  std::size_t conv_kernel = 5;
  std::size_t fc_size = 50;
};

struct AceConfig {
  std::size_t channels = 1, height = 28, width = 28;
  std::size_t n_classes = 10;
  std::size_t n_latent = 1;  // per class
  Family family = Family::gaussian;
  bool enable_spatial = false;
  bool enable_color = false;
  float stat_jitter = 0.f;    // optional sampling of the symmetry statistics
  double weight_decay = 0.0;  // optional L2 "reg constraints", default off
  EncoderSpec encoder;
  DecoderSpec decoder;
  ClassifierSpec classifier;
  LocNetSpec locnet;

  Likelihood likelihood() const {
    return channels == 1 ? Likelihood::bernoulli
                         : Likelihood::gaussian_fixed_var;
  }
  std::size_t obs_size() const { return channels * height * width; }
};

// Box 0.3 of the architecture; identity values when the matching flag is off.
struct SymmetryStatistics {
  AffineParams spatial;
  ColorMatrix color;
};

struct AceLoss {
  ElboTerms ae;
  TensorF classifier_nll;
  TensorF total;  // ae.total + classifier_nll, one addition
};

struct TestOutput {
  TensorF class_probs;
  TensorF reconstruction;
  AceLoss loss;
  std::vector<std::size_t> sampled_classes;
};

struct GridSpec {
  std::size_t points = 20;
  double lo = -4.0;
  double hi = 4.0;
};

// Mean cross-entropy of logits[B,N] against integer labels.
TensorF cross_entropy(const TensorF& logits,
                      const std::vector<std::size_t>& labels);

class AceModel {
 public:
  AceModel(AceConfig cfg, std::uint64_t seed);

  const AceConfig& config() const { return cfg_; }
  std::vector<ParamRef<float>>& params() { return params_; }
  CounterRng& rng() { return rng_; }
  void set_rng(CounterRng rng) { rng_ = rng; }
  void zero_grad();

  // Localization heads (identity at initialization by construction).
  SymmetryStatistics extract_symmetry_statistics(const TensorF& x,
                                                 bool training = false);

  // Box 0.4: warp, then color transform.
  TensorF canonicalize(const TensorF& x, const SymmetryStatistics& stats) const;

  // Inverse color then inverse warp, applied to decoded probabilities.
  TensorF apply_output_transforms(const TensorF& probs,
                                  const SymmetryStatistics& stats) const;

  AceLoss forward_train(const TensorF& x, const std::vector<std::size_t>& labels,
                        bool training = true);
  TestOutput forward_test(const TensorF& x,
                          const std::vector<std::size_t>* labels = nullptr);

  // Creative regime. z defaults to a prior draw, statistics to identity.
  TensorF dream(std::size_t cls, const TensorF* z = nullptr,
                const SymmetryStatistics* stats = nullptr);

  // Deterministic latent grid (no noise), identity statistics.  grid.size()
  // must equal n_latent (1 or 2); returns [n_points_total, C, H, W].
  TensorF traverse(std::size_t cls, const std::vector<GridSpec>& grid);

  // Pieces exposed for composition tests and the CLI.
  TensorF classifier_logits(const TensorF& canonical, bool training);
  TensorF encoder_trunk(const TensorF& canonical);
  std::pair<TensorF, TensorF> latent_heads(const TensorF& trunk);
  TensorF decode_by_class(const TensorF& z,
                          const std::vector<std::size_t>& classes);  // logits
  TensorF decode_probs(const TensorF& z, const std::vector<std::size_t>& cls);

 private:
  struct ConvStack {
    std::vector<ConvLayer> layers;  // each followed by maxpool2x2
  };
  struct DenseStack {
    std::vector<DenseLayer> layers;
  };
  struct DecoderBank {
    DenseStack fc;
    DenseLayer out;                    // used when deconv path is empty
    DenseLayer seed;                   // fc to deconv input grid
    std::vector<DeconvLayer> deconvs;  // stride-2 tail
    std::size_t seed_c = 0, seed_h = 0, seed_w = 0;
  };

  TensorF conv_forward(const ConvStack& s, const TensorF& x) const;
  TensorF flatten2(const TensorF& x) const;
  void register_param(const std::string& name, TensorF t);
  DenseLayer make_dense(const std::string& name, std::size_t out,
                        std::size_t in, Activation act);
  ConvLayer make_conv(const std::string& name, std::size_t out, std::size_t in,
                      std::size_t k);
  DeconvLayer make_deconv(const std::string& name, std::size_t in,
                          std::size_t out, std::size_t k);

  AceConfig cfg_;
  CounterRng rng_;
  std::vector<ParamRef<float>> params_;

  // Symmetry statistics net (shared trunk, two heads).
  ConvStack loc_conv_;
  DenseLayer loc_fc_;
  DenseLayer loc_theta_head_;
  DenseLayer loc_color_head_;

  ConvStack cls_conv_;
  DenseLayer cls_fc_;
  DenseLayer cls_out_;

  ConvStack enc_conv_;
  DenseStack enc_fc_;
  DenseLayer mean_head_;
  DenseLayer raw_head_;

  std::vector<DecoderBank> decoders_;
};

}  // namespace ace
