#include "ace/model.hpp"

#include <cmath>

namespace ace {

namespace {

// Logit bias that keeps the initial color matrix close to identity after the
// row softmax (diagonal weight ~0.96) while staying well conditioned.
constexpr float kColorDiagBias = 4.0f;

}  // namespace

TensorF cross_entropy(const TensorF& logits,
                      const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects [B,N]");
  std::size_t B = logits.shape()[0], N = logits.shape()[1];
  if (labels.size() != B)
    throw ContractError("cross_entropy: label count mismatch");
  std::vector<float> onehot(B * N, 0.f);
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= N)
      throw ContractError("label " + std::to_string(labels[b]) +
                          " out of range [0," + std::to_string(N) + ")");
    onehot[b * N + labels[b]] = 1.f;
  }
  TensorF m = max(logits, {1}, true);
  TensorF shifted = sub(logits, m);
  TensorF lse = log(sum(exp(shifted), {1}, true));
  TensorF log_probs = sub(shifted, lse);
  TensorF mask = TensorF::from({B, N}, std::move(onehot));
  TensorF picked = sum(mul(log_probs, mask), {1});
  return neg(mean(picked));
}

// ---------------------------------------------------------------------------

AceModel::AceModel(AceConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), rng_(CounterRng::derive(seed, 0)) {
  CounterRng init_rng(CounterRng::derive(seed, 1));
  auto dense = [&](const std::string& name, std::size_t out, std::size_t in,
                   Activation act) {
    DenseLayer l;
    l.W = init_dense_weight<float>(out, in, init_rng);
    l.b = init_zero_param<float>({out});
    l.act = act;
    register_param(name + ".W", l.W);
    register_param(name + ".b", l.b);
    return l;
  };
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in,
                  std::size_t k) {
    ConvLayer l;
    l.K = init_conv_kernel<float>({out, in, k, k}, init_rng);
    l.b = init_zero_param<float>({out});
    l.act = Activation::relu;
    register_param(name + ".K", l.K);
    register_param(name + ".b", l.b);
    return l;
  };
  auto deconv = [&](const std::string& name, std::size_t in, std::size_t out,
                    std::size_t k, Activation act) {
    DeconvLayer l;
    l.K = init_conv_kernel<float>({in, out, k, k}, init_rng);
    l.b = init_zero_param<float>({out});
    l.stride = k;
    l.padding = Padding::valid;
    l.act = act;
    register_param(name + ".K", l.K);
    register_param(name + ".b", l.b);
    return l;
  };
  auto pooled_hw = [&](std::size_t n_pools) {
    std::size_t h = cfg_.height, w = cfg_.width;
    for (std::size_t i = 0; i < n_pools; ++i) {
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
    return std::pair{h, w};
  };

  // Symmetry statistics net.
  if (cfg_.enable_spatial || cfg_.enable_color) {
    std::size_t in_c = cfg_.channels;
    for (std::size_t i = 0; i < cfg_.locnet.conv_channels.size(); ++i) {
      loc_conv_.layers.push_back(conv("loc.conv" + std::to_string(i),
                                      cfg_.locnet.conv_channels[i], in_c,
                                      cfg_.locnet.conv_kernel));
      in_c = cfg_.locnet.conv_channels[i];
    }
    auto [h, w] = pooled_hw(loc_conv_.layers.size());
    std::size_t flat = in_c * h * w;
    loc_fc_ = dense("loc.fc", cfg_.locnet.fc_size, flat, Activation::relu);
    // Final heads start at the identity transform: zero weights, identity
    // bias, so training begins in the no-warp regime.
    loc_theta_head_.W = init_zero_param<float>({6, cfg_.locnet.fc_size});
    loc_theta_head_.b =
        TensorF::param({6}, {1.f, 0.f, 0.f, 0.f, 1.f, 0.f});
    loc_theta_head_.act = Activation::none;
    register_param("loc.theta.W", loc_theta_head_.W);
    register_param("loc.theta.b", loc_theta_head_.b);
    if (cfg_.enable_color) {
      std::vector<float> cb(9, 0.f);
      cb[0] = cb[4] = cb[8] = kColorDiagBias;
      loc_color_head_.W = init_zero_param<float>({9, cfg_.locnet.fc_size});
      loc_color_head_.b = TensorF::param({9}, std::move(cb));
      loc_color_head_.act = Activation::none;
      register_param("loc.color.W", loc_color_head_.W);
      register_param("loc.color.b", loc_color_head_.b);
    }
  }

  // Classifier branch.
  {
    std::size_t in_c = cfg_.channels;
    for (std::size_t i = 0; i < cfg_.classifier.conv_channels.size(); ++i) {
      cls_conv_.layers.push_back(conv("cls.conv" + std::to_string(i),
                                      cfg_.classifier.conv_channels[i], in_c,
                                      cfg_.classifier.conv_kernel));
      in_c = cfg_.classifier.conv_channels[i];
    }
    auto [h, w] = pooled_hw(cls_conv_.layers.size());
    std::size_t flat = cls_conv_.layers.empty() ? cfg_.obs_size() : in_c * h * w;
    cls_fc_ = dense("cls.fc", cfg_.classifier.fc_size, flat, Activation::relu);
    cls_out_ = dense("cls.out", cfg_.n_classes, cfg_.classifier.fc_size,
                     Activation::none);
  }

  // Encoder trunk and per-class latent heads.
  {
    std::size_t in_c = cfg_.channels;
    for (std::size_t i = 0; i < cfg_.encoder.conv_channels.size(); ++i) {
      enc_conv_.layers.push_back(conv("enc.conv" + std::to_string(i),
                                      cfg_.encoder.conv_channels[i], in_c,
                                      cfg_.encoder.conv_kernel));
      in_c = cfg_.encoder.conv_channels[i];
    }
    auto [h, w] = pooled_hw(enc_conv_.layers.size());
    std::size_t width =
        enc_conv_.layers.empty() ? cfg_.obs_size() : in_c * h * w;
    for (std::size_t i = 0; i < cfg_.encoder.fc_sizes.size(); ++i) {
      enc_fc_.layers.push_back(dense("enc.fc" + std::to_string(i),
                                     cfg_.encoder.fc_sizes[i], width,
                                     Activation::relu));
      width = cfg_.encoder.fc_sizes[i];
    }
    std::size_t head = cfg_.n_classes * cfg_.n_latent;
    mean_head_ = dense("enc.mean", head, width, Activation::none);
    raw_head_ = dense("enc.raw", head, width, Activation::none);
  }

  // Per-class decoder banks ("Size = N x N_C").
  decoders_.resize(cfg_.n_classes);
  for (std::size_t c = 0; c < cfg_.n_classes; ++c) {
    std::string base = "dec" + std::to_string(c);
    DecoderBank& bank = decoders_[c];
    std::size_t width = cfg_.n_latent;
    for (std::size_t i = 0; i < cfg_.decoder.fc_sizes.size(); ++i) {
      bank.fc.layers.push_back(dense(base + ".fc" + std::to_string(i),
                                     cfg_.decoder.fc_sizes[i], width,
                                     Activation::relu));
      width = cfg_.decoder.fc_sizes[i];
    }
    if (cfg_.decoder.deconv_channels.empty()) {
      bank.out = dense(base + ".out", cfg_.obs_size(), width, Activation::none);
    } else {
      std::size_t n = cfg_.decoder.deconv_channels.size();
      std::size_t k = cfg_.decoder.deconv_kernel;
      std::size_t factor = 1;
      for (std::size_t i = 0; i < n; ++i) factor *= k;
      if (cfg_.height % factor || cfg_.width % factor)
        throw ContractError("deconv decoder needs canvas divisible by " +
                            std::to_string(factor));
      bank.seed_c = cfg_.decoder.deconv_channels[0];
      bank.seed_h = cfg_.height / factor;
      bank.seed_w = cfg_.width / factor;
      bank.seed = dense(base + ".seed",
                        bank.seed_c * bank.seed_h * bank.seed_w, width,
                        Activation::relu);
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t out_c =
            i + 1 < n ? cfg_.decoder.deconv_channels[i + 1] : cfg_.channels;
        bank.deconvs.push_back(
            deconv(base + ".deconv" + std::to_string(i),
                   cfg_.decoder.deconv_channels[i], out_c, k,
                   i + 1 < n ? Activation::relu : Activation::none));
      }
    }
  }
}

void AceModel::register_param(const std::string& name, TensorF t) {
  params_.push_back({name, std::move(t)});
}

void AceModel::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

TensorF AceModel::flatten2(const TensorF& x) const {
  return reshape(x, {x.shape()[0], x.size() / x.shape()[0]});
}

TensorF AceModel::conv_forward(const ConvStack& s, const TensorF& x) const {
  TensorF h = x;
  for (const auto& l : s.layers) h = maxpool2x2(l.apply(h));
  return h;
}

SymmetryStatistics AceModel::extract_symmetry_statistics(const TensorF& x,
                                                         bool training) {
  std::size_t B = x.shape()[0];
  SymmetryStatistics stats{AffineParams::identity(B),
                           ColorMatrix::identity(B)};
  if (!cfg_.enable_spatial && !cfg_.enable_color) return stats;

  TensorF h = loc_fc_.apply(flatten2(conv_forward(loc_conv_, x)));
  if (cfg_.enable_spatial) {
    TensorF theta = reshape(loc_theta_head_.apply(h), {B, 2, 3});
    if (training && cfg_.stat_jitter > 0.f)
      theta = add(theta, draw_noise<float>(Family::gaussian, theta.shape(),
                                           rng_) *
                             cfg_.stat_jitter);
    stats.spatial = AffineParams{theta};
  }
  if (cfg_.enable_color) {
    TensorF logits = reshape(loc_color_head_.apply(h), {B, 3, 3});
    if (training && cfg_.stat_jitter > 0.f)
      logits = add(logits, draw_noise<float>(Family::gaussian, logits.shape(),
                                             rng_) *
                               cfg_.stat_jitter);
    stats.color = row_stochastic_parameterize(logits);
  }
  return stats;
}

TensorF AceModel::canonicalize(const TensorF& x,
                               const SymmetryStatistics& stats) const {
  TensorF out = x;
  if (cfg_.enable_spatial)
    out = warp_affine(out, stats.spatial, cfg_.height, cfg_.width);
  if (cfg_.enable_color) out = color_apply(stats.color, out);
  return out;
}

TensorF AceModel::apply_output_transforms(
    const TensorF& probs, const SymmetryStatistics& stats) const {
  TensorF out = probs;
  if (cfg_.enable_color)
    out = color_apply(color_invert(stats.color), out);
  if (cfg_.enable_spatial)
    out = warp_affine(out, invert_affine(stats.spatial), cfg_.height,
                      cfg_.width);
  return out;
}

TensorF AceModel::classifier_logits(const TensorF& canonical, bool training) {
  TensorF h = dropout(canonical, cfg_.classifier.dropout_input, training, rng_);
  if (!cls_conv_.layers.empty()) {
    for (const auto& l : cls_conv_.layers) {
      h = maxpool2x2(l.apply(h));
      h = dropout(h, cfg_.classifier.dropout_hidden, training, rng_);
    }
  }
  h = cls_fc_.apply(flatten2(h));
  h = dropout(h, cfg_.classifier.dropout_hidden, training, rng_);
  return cls_out_.apply(h);
}

TensorF AceModel::encoder_trunk(const TensorF& canonical) {
  TensorF h = canonical;
  if (!enc_conv_.layers.empty()) h = conv_forward(enc_conv_, h);
  h = flatten2(h);
  for (const auto& l : enc_fc_.layers) h = l.apply(h);
  return h;
}

std::pair<TensorF, TensorF> AceModel::latent_heads(const TensorF& trunk) {
  return {mean_head_.apply(trunk), raw_head_.apply(trunk)};
}

TensorF AceModel::decode_by_class(const TensorF& z,
                                  const std::vector<std::size_t>& classes) {
  std::size_t B = z.shape()[0];
  if (classes.size() != B)
    throw ContractError("decode_by_class: class list does not match batch");
  TensorF out;
  for (std::size_t c = 0; c < cfg_.n_classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < B; ++i)
      if (classes[i] == c) idx.push_back(i);
    if (idx.empty()) continue;
    const DecoderBank& bank = decoders_[c];
    TensorF h = gather_rows(z, idx);
    for (const auto& l : bank.fc.layers) h = l.apply(h);
    TensorF logits;
    if (bank.deconvs.empty()) {
      logits = bank.out.apply(h);
    } else {
      h = reshape(bank.seed.apply(h),
                  {idx.size(), bank.seed_c, bank.seed_h, bank.seed_w});
      for (const auto& l : bank.deconvs) h = l.apply(h);
      logits = flatten2(h);
    }
    TensorF placed = scatter_rows(logits, idx, B);
    out = out.defined() ? add(out, placed) : placed;
  }
  return out;
}

TensorF AceModel::decode_probs(const TensorF& z,
                               const std::vector<std::size_t>& cls) {
  TensorF logits = decode_by_class(z, cls);
  return reshape(sigmoid(logits),
                 {z.shape()[0], cfg_.channels, cfg_.height, cfg_.width});
}

AceLoss AceModel::forward_train(const TensorF& x,
                                const std::vector<std::size_t>& labels,
                                bool training) {
  std::size_t B = x.shape()[0];
  if (labels.size() != B)
    throw ContractError("forward_train: label count does not match batch");
  for (std::size_t l : labels)
    if (l >= cfg_.n_classes)
      throw ContractError("label " + std::to_string(l) + " out of range [0," +
                          std::to_string(cfg_.n_classes) + ")");

  SymmetryStatistics stats = extract_symmetry_statistics(x, training);
  TensorF canonical = canonicalize(x, stats);
  TensorF nll = cross_entropy(classifier_logits(canonical, training), labels);

  TensorF trunk = encoder_trunk(canonical);
  auto [mean_all, raw_all] = latent_heads(trunk);
  TensorF m_sel = select_block(mean_all, labels, cfg_.n_latent);
  TensorF r_sel = select_block(raw_all, labels, cfg_.n_latent);
  LatentParams post = LatentParams::from_raw(m_sel, r_sel, cfg_.family);

  TensorF noise =
      draw_noise<float>(cfg_.family, {B, cfg_.n_latent}, rng_);
  TensorF z = sample(post, noise);
  TensorF probs = decode_probs(z, labels);
  TensorF restored = apply_output_transforms(probs, stats);

  TensorF recon = recon_error_probs(x, restored, cfg_.likelihood());
  TensorF gen = kl_divergence(post);

  AceLoss loss;
  loss.ae = ElboTerms::make(recon, gen);
  loss.classifier_nll = nll;
  loss.total = add(loss.ae.total, loss.classifier_nll);
  if (cfg_.weight_decay > 0.0) {
    TensorF reg;
    for (auto& p : params_) {
      TensorF flat = reshape(p.tensor, {p.tensor.size()});
      TensorF s = sum(mul(flat, flat));
      reg = reg.defined() ? add(reg, s) : s;
    }
    loss.total = add(loss.total, reg * static_cast<float>(cfg_.weight_decay));
  }
  return loss;
}

TestOutput AceModel::forward_test(const TensorF& x,
                                  const std::vector<std::size_t>* labels) {
  std::size_t B = x.shape()[0];
  SymmetryStatistics stats = extract_symmetry_statistics(x, false);
  TensorF canonical = canonicalize(x, stats);
  TensorF logits = classifier_logits(canonical, false);
  TensorF omega = softmax(logits);

  TensorF trunk = encoder_trunk(canonical);
  auto [mean_all, raw_all] = latent_heads(trunk);
  std::vector<LatentParams> components;
  components.reserve(cfg_.n_classes);
  for (std::size_t c = 0; c < cfg_.n_classes; ++c) {
    std::vector<std::size_t> cls(B, c);
    components.push_back(LatentParams::from_raw(
        select_block(mean_all, cls, cfg_.n_latent),
        select_block(raw_all, cls, cfg_.n_latent), cfg_.family));
  }
  MixturePosterior mix = mixture_posterior(std::move(components), omega);
  std::vector<std::size_t> sampled = mix.draw_classes(rng_);
  TensorF z = mix.sample_values(sampled, rng_);

  TensorF probs = decode_probs(z, sampled);
  TensorF restored = apply_output_transforms(probs, stats);

  TensorF recon = recon_error_probs(x, restored, cfg_.likelihood());
  LatentParams picked = LatentParams::from_raw(
      select_block(mean_all, sampled, cfg_.n_latent),
      select_block(raw_all, sampled, cfg_.n_latent), cfg_.family);
  TensorF gen = kl_divergence(picked);

  TestOutput out;
  out.class_probs = omega;
  out.reconstruction = restored;
  out.sampled_classes = std::move(sampled);
  out.loss.ae = ElboTerms::make(recon, gen);
  out.loss.classifier_nll =
      labels ? cross_entropy(logits, *labels) : TensorF::scalar(0.f);
  out.loss.total = add(out.loss.ae.total, out.loss.classifier_nll);
  return out;
}

TensorF AceModel::dream(std::size_t cls, const TensorF* z,
                        const SymmetryStatistics* stats) {
  if (cls >= cfg_.n_classes)
    throw ContractError("dream: class " + std::to_string(cls) +
                        " out of range");
  TensorF latent;
  if (z) {
    if (z->size() != cfg_.n_latent)
      throw ContractError("dream: latent size mismatch");
    latent = reshape(*z, {1, cfg_.n_latent});
  } else {
    TensorF noise = draw_noise<float>(cfg_.family, {1, cfg_.n_latent}, rng_);
    if (cfg_.family == Family::laplacian) {
      std::vector<float> v(noise.size());
      for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = laplace_standard_from_uniform(noise.data()[i]);
      latent = TensorF::from({1, cfg_.n_latent}, std::move(v));
    } else {
      latent = noise;
    }
  }
  TensorF probs = decode_probs(latent, {cls});
  if (stats) {
    TensorF out = probs;
    if (stats->color.m.defined() && cfg_.channels == 3)
      out = color_apply(color_invert(stats->color), out);
    if (stats->spatial.theta.defined())
      out = warp_affine(out, invert_affine(stats->spatial), cfg_.height,
                        cfg_.width);
    return out;
  }
  return probs;
}

TensorF AceModel::traverse(std::size_t cls, const std::vector<GridSpec>& grid) {
  if (cls >= cfg_.n_classes)
    throw ContractError("traverse: class out of range");
  if (cfg_.n_latent != 1 && cfg_.n_latent != 2)
    throw ContractError("traverse requires n_latent in {1,2}");
  if (grid.size() != cfg_.n_latent)
    throw ContractError("traverse: grid dimension " +
                        std::to_string(grid.size()) + " != n_latent " +
                        std::to_string(cfg_.n_latent));
  auto linspace = [](const GridSpec& g) {
    std::vector<float> v(g.points);
    for (std::size_t i = 0; i < g.points; ++i)
      v[i] = static_cast<float>(
          g.points == 1 ? g.lo
                        : g.lo + (g.hi - g.lo) * static_cast<double>(i) /
                                     static_cast<double>(g.points - 1));
    return v;
  };
  std::vector<float> zv;
  std::size_t total;
  if (grid.size() == 1) {
    auto v = linspace(grid[0]);
    total = v.size();
    zv = std::move(v);
  } else {
    auto r = linspace(grid[0]);
    auto c = linspace(grid[1]);
    total = r.size() * c.size();
    zv.reserve(total * 2);
    for (float a : r)
      for (float b : c) {
        zv.push_back(a);
        zv.push_back(b);
      }
  }
  TensorF z = TensorF::from({total, cfg_.n_latent}, std::move(zv));
  return decode_probs(z, std::vector<std::size_t>(total, cls));
}

}  // namespace ace
