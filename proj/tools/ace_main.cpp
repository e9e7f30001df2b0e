#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ace/checkpoint.hpp"
#include "ace/config.hpp"
#include "ace/data.hpp"
#include "ace/image_io.hpp"
#include "ace/model.hpp"
#include "ace/train.hpp"

namespace fs = std::filesystem;
using namespace ace;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

std::uint64_t seed_with_env(std::uint64_t seed) {
  if (const char* env = std::getenv("ACE_SEED")) return std::strtoull(env, nullptr, 10);
  return seed;
}

bool parse_grid_spec(const std::string& s, GridSpec& out) {
  double lo, hi;
  unsigned long points;
  if (std::sscanf(s.c_str(), "%lu@[%lf,%lf]", &points, &lo, &hi) != 3)
    return false;
  if (points == 0 || hi < lo) return false;
  out = {static_cast<std::size_t>(points), lo, hi};
  return true;
}

void write_image_grid(const std::vector<std::vector<float>>& tiles,
                      std::size_t channels, std::size_t h, std::size_t w,
                      std::size_t cols, const std::string& path) {
  write_pnm(tile_images(tiles, channels, h, w, cols), path);
}

int cmd_synth(const std::string& name, const std::string& images_path,
              const std::string& labels_path, std::uint64_t seed,
              std::size_t count, const std::string& out_path,
              bool zero_distortion, std::size_t clutter, bool centered) {
  Dataset d;
  if (name == "rts-mnist" || name == "tc-mnist") {
    if (images_path.empty() || labels_path.empty()) {
      std::cerr << "synth " << name << " requires --images and --labels IDX files\n";
      return kExitUsage;
    }
    IdxImages src = load_idx_images(images_path);
    auto labels = load_idx_labels(labels_path);
    if (name == "rts-mnist") {
      RtsOptions opt;
      opt.count = count;
      opt.zero_distortion = zero_distortion;
      d = gen_rts(src, labels, seed, opt);
    } else {
      TcOptions opt;
      opt.count = count;
      opt.clutter_pieces = clutter;
      opt.centered = centered;
      d = gen_tc(src, labels, seed, opt);
    }
  } else if (name == "synth-rgb") {
    d = gen_synth_rgb(seed, count ? count : 1000);
  } else {
    std::cerr << "unknown dataset '" << name
              << "' (expected rts-mnist | tc-mnist | synth-rgb)\n";
    return kExitUsage;
  }
  d.save(out_path);

  double rot_lo = 0, rot_hi = 0, t_lo = 0, t_hi = 0, s_lo = 1, s_hi = 1;
  if (!d.meta.empty()) {
    rot_lo = rot_hi = d.meta[0].rotation_deg;
    t_lo = t_hi = d.meta[0].tx;
    s_lo = s_hi = d.meta[0].scale;
    for (const auto& m : d.meta) {
      rot_lo = std::min(rot_lo, m.rotation_deg);
      rot_hi = std::max(rot_hi, m.rotation_deg);
      t_lo = std::min({t_lo, m.tx, m.ty});
      t_hi = std::max({t_hi, m.tx, m.ty});
      s_lo = std::min(s_lo, m.scale);
      s_hi = std::max(s_hi, m.scale);
    }
  }
  std::cout << "wrote " << d.count() << " records (" << d.channels << "x"
            << d.height << "x" << d.width << ") to " << out_path << "\n"
            << "meta ranges: rotation [" << rot_lo << ", " << rot_hi
            << "] deg, translation [" << t_lo << ", " << t_hi << "] px, scale ["
            << s_lo << ", " << s_hi << "]\n";
  return kExitOk;
}

int cmd_train(RunConfig cfg, const std::string& resume_path) {
  cfg.seed = seed_with_env(cfg.seed);
  Dataset data = Dataset::load(cfg.dataset_path);
  cfg.model.channels = data.channels;
  cfg.model.height = data.height;
  cfg.model.width = data.width;

  fs::create_directories(cfg.out_dir);
  std::unique_ptr<Trainer> trainer;
  if (!resume_path.empty()) {
    CheckpointData ck = load_checkpoint(resume_path);
    ck.config.epochs = cfg.epochs;  // allow extending a finished run
    trainer = std::make_unique<Trainer>(std::move(ck), data);
  } else {
    trainer = std::make_unique<Trainer>(cfg, data);
  }

  std::string metrics_path = cfg.out_dir + "/metrics.log";
  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw FormatError("cannot write " + metrics_path);
  metrics << "# epoch total recon gen cls acc lr\n";

  const RunConfig& rc = trainer->config();
  try {
    trainer->run([&](const EpochStats& s) {
      char line[256];
      std::snprintf(line, sizeof line, "%zu %.6f %.6f %.6f %.6f %.6f %.6g",
                    s.epoch, s.total, s.recon, s.gen, s.cls_nll, s.holdout_acc,
                    s.lr);
      metrics << line << "\n";
      metrics.flush();
      std::cout << line << std::endl;
      if (rc.checkpoint_every && (s.epoch + 1) % rc.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof name, "/checkpoint_epoch%04zu.ckpt",
                      s.epoch + 1);
        save_checkpoint(cfg.out_dir + name, rc, trainer->epoch(),
                        trainer->model(), trainer->adam());
      }
    });
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    save_checkpoint(cfg.out_dir + "/checkpoint_emergency.ckpt", rc,
                    trainer->epoch(), trainer->model(), trainer->adam());
    return kExitNumeric;
  }
  save_checkpoint(cfg.out_dir + "/checkpoint_final.ckpt", rc, trainer->epoch(),
                  trainer->model(), trainer->adam());
  std::cout << "final checkpoint: " << cfg.out_dir << "/checkpoint_final.ckpt"
            << std::endl;
  return kExitOk;
}

int cmd_traverse(const std::string& ckpt_path, std::size_t cls,
                 const std::string& grid_spec, std::size_t central,
                 const std::string& out_path) {
  CheckpointData ck = load_checkpoint(ckpt_path);
  AceModel& model = *ck.model;
  if (cls >= model.config().n_classes) {
    std::cerr << "class " << cls << " out of range\n";
    return kExitUsage;
  }
  GridSpec spec;
  if (!parse_grid_spec(grid_spec, spec)) {
    std::cerr << "bad grid spec '" << grid_spec << "' (want e.g. 20@[-4,4])\n";
    return kExitUsage;
  }
  std::size_t n_lat = model.config().n_latent;
  std::vector<GridSpec> grid(n_lat, spec);
  TensorF images = model.traverse(cls, grid);
  auto tiles = split_batch(images);

  std::size_t cols = n_lat == 1 ? spec.points : spec.points;
  if (n_lat == 2 && central > 0) {
    if (central > spec.points) {
      std::cerr << "--central larger than grid\n";
      return kExitUsage;
    }
    std::size_t off = (spec.points - central) / 2;
    std::vector<std::vector<float>> picked;
    for (std::size_t i = 0; i < central; ++i)
      for (std::size_t j = 0; j < central; ++j)
        picked.push_back(tiles[(off + i) * spec.points + (off + j)]);
    tiles = std::move(picked);
    cols = central;
  }
  write_image_grid(tiles, model.config().channels, model.config().height,
                   model.config().width, cols, out_path);
  std::cout << "wrote " << tiles.size() << " tiles to " << out_path
            << std::endl;
  return kExitOk;
}

int cmd_dream(const std::string& ckpt_path, std::size_t cls, std::size_t count,
              const std::string& translate, double rotate, double scale,
              std::uint64_t seed, const std::string& out_path) {
  if (count == 0) {
    std::cerr << "--count must be positive\n";
    return kExitUsage;
  }
  CheckpointData ck = load_checkpoint(ckpt_path);
  AceModel& model = *ck.model;
  if (cls >= model.config().n_classes) {
    std::cerr << "class " << cls << " out of range\n";
    return kExitUsage;
  }

  bool has_stats = !translate.empty() || rotate != 0.0 || scale != 1.0;
  SymmetryStatistics stats;
  if (has_stats) {
    double dx = 0, dy = 0;
    if (!translate.empty() &&
        std::sscanf(translate.c_str(), "%lf,%lf", &dx, &dy) != 2) {
      std::cerr << "bad --translate '" << translate << "' (want dx,dy)\n";
      return kExitUsage;
    }
    if (scale <= 0.0) {
      std::cerr << "--scale must be positive\n";
      return kExitUsage;
    }
    // Canonicalizing convention: the supplied statistics are inverted on the
    // output path, so the dreamed content is scaled by `scale`, rotated by
    // `rotate` degrees and shifted by (dx, dy) pixels.
    double r = rotate * M_PI / 180.0;
    double tnx = 2.0 * dx / (static_cast<double>(model.config().width) - 1.0);
    double tny = 2.0 * dy / (static_cast<double>(model.config().height) - 1.0);
    std::vector<float> th = {
        static_cast<float>(scale * std::cos(r)),
        static_cast<float>(-scale * std::sin(r)),
        static_cast<float>(tnx),
        static_cast<float>(scale * std::sin(r)),
        static_cast<float>(scale * std::cos(r)),
        static_cast<float>(tny)};
    stats.spatial = AffineParams{TensorF::from({1, 2, 3}, std::move(th))};
    stats.color = ColorMatrix::identity(1);
  }

  model.set_rng(CounterRng(CounterRng::derive(seed_with_env(seed), 0xD8EA)));
  std::vector<std::vector<float>> tiles;
  for (std::size_t i = 0; i < count; ++i) {
    TensorF img = model.dream(cls, nullptr, has_stats ? &stats : nullptr);
    tiles.push_back(
        std::vector<float>(img.values().begin(), img.values().end()));
  }
  write_image_grid(tiles, model.config().channels, model.config().height,
                   model.config().width, count, out_path);
  std::cout << "wrote " << count << " dreams to " << out_path << std::endl;
  return kExitOk;
}

int cmd_reconstruct(const std::string& ckpt_path, const std::string& data_path,
                    const std::string& indices_csv, const std::string& out_path) {
  CheckpointData ck = load_checkpoint(ckpt_path);
  AceModel& model = *ck.model;
  Dataset data = Dataset::load(data_path);
  if (data.channels != model.config().channels ||
      data.height != model.config().height ||
      data.width != model.config().width) {
    std::cerr << "dataset canvas does not match checkpoint\n";
    return kExitUsage;
  }
  std::vector<std::size_t> indices;
  {
    std::stringstream ss(indices_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) indices.push_back(std::stoul(item));
  }
  if (indices.empty()) {
    std::cerr << "--indices must name at least one record\n";
    return kExitUsage;
  }
  for (std::size_t i : indices)
    if (i >= data.count()) {
      std::cerr << "index " << i << " out of range (" << data.count()
                << " records)\n";
      return kExitUsage;
    }

  TensorF x = data.batch(indices);
  SymmetryStatistics stats = model.extract_symmetry_statistics(x, false);
  TensorF canonical = model.canonicalize(x, stats);
  TestOutput out = model.forward_test(x);

  auto xs = split_batch(x);
  auto cs = split_batch(canonical);
  auto rs = split_batch(out.reconstruction);
  std::vector<std::vector<float>> tiles;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    tiles.push_back(xs[i]);
    tiles.push_back(cs[i]);
    tiles.push_back(rs[i]);
  }
  write_image_grid(tiles, model.config().channels, model.config().height,
                   model.config().width, 3, out_path);
  std::cout << "wrote " << tiles.size() << " tiles to " << out_path
            << std::endl;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"auto-classifier-encoder with spatial and color symmetry statistics"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "synthesize a dataset");
  std::string s_name, s_images, s_labels, s_out = "dataset.acds";
  std::uint64_t s_seed = 1;
  std::size_t s_count = 0, s_clutter = 6;
  bool s_zero = false, s_centered = false;
  synth->add_option("name", s_name, "rts-mnist | tc-mnist | synth-rgb")->required();
  synth->add_option("--images", s_images, "source IDX image file");
  synth->add_option("--labels", s_labels, "source IDX label file");
  synth->add_option("--seed", s_seed, "generation seed");
  synth->add_option("--count", s_count, "record count (default: source count)");
  synth->add_option("--out", s_out, "output dataset path");
  synth->add_flag("--zero-distortion", s_zero, "rts: centered, undistorted");
  synth->add_option("--clutter", s_clutter, "tc: clutter piece count");
  synth->add_flag("--centered", s_centered, "tc: fixed central placement");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string t_config, t_resume;
  RunConfig t_cfg;
  std::string t_dataset, t_out;
  std::size_t t_epochs = 0;
  double t_lr = -1.0;
  std::uint64_t t_seed = 0;
  bool t_spatial = false, t_color = false;
  train->add_option("--config", t_config, "key=value config file");
  train->add_option("--dataset", t_dataset, "dataset file (overrides config)");
  train->add_option("--epochs", t_epochs, "epoch count (overrides config)");
  train->add_option("--lr", t_lr, "base learning rate (overrides config)");
  train->add_option("--seed", t_seed, "run seed (overrides config)");
  train->add_option("--out", t_out, "output directory (overrides config)");
  train->add_option("--resume", t_resume, "resume from checkpoint");
  train->add_flag("--spatial", t_spatial, "enable spatial symmetry statistics");
  train->add_flag("--color", t_color, "enable color symmetry statistics");

  // traverse
  auto* traverse = app.add_subcommand("traverse", "decode a latent grid");
  std::string tr_ckpt, tr_grid = "20@[-4,4]", tr_out = "traverse.pgm";
  std::size_t tr_class = 0, tr_central = 0;
  traverse->add_option("--checkpoint", tr_ckpt)->required();
  traverse->add_option("--class", tr_class)->required();
  traverse->add_option("--grid", tr_grid, "points@[lo,hi], e.g. 20@[-4,4]");
  traverse->add_option("--central", tr_central, "extract central k x k (2-D)");
  traverse->add_option("--out", tr_out);

  // dream
  auto* dream = app.add_subcommand("dream", "sample the creative regime");
  std::string d_ckpt, d_translate, d_out = "dream.pgm";
  std::size_t d_class = 0, d_count = 1;
  double d_rotate = 0.0, d_scale = 1.0;
  std::uint64_t d_seed = 1;
  dream->add_option("--checkpoint", d_ckpt)->required();
  dream->add_option("--class", d_class)->required();
  dream->add_option("--count", d_count);
  dream->add_option("--translate", d_translate, "dx,dy pixels");
  dream->add_option("--rotate", d_rotate, "degrees");
  dream->add_option("--scale", d_scale, "scale factor");
  dream->add_option("--seed", d_seed);
  dream->add_option("--out", d_out);

  // reconstruct
  auto* recon = app.add_subcommand("reconstruct",
                                   "original | canonical | reconstruction");
  std::string r_ckpt, r_data, r_indices = "0", r_out = "reconstruct.pgm";
  recon->add_option("--checkpoint", r_ckpt)->required();
  recon->add_option("--dataset", r_data)->required();
  recon->add_option("--indices", r_indices, "comma-separated record indices");
  recon->add_option("--out", r_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth)
      return cmd_synth(s_name, s_images, s_labels, s_seed, s_count, s_out,
                       s_zero, s_clutter, s_centered);
    if (*train) {
      if (!t_config.empty()) t_cfg = RunConfig::from_file(t_config);
      if (!t_dataset.empty()) t_cfg.dataset_path = t_dataset;
      if (t_epochs) t_cfg.epochs = t_epochs;
      if (t_lr >= 0.0) t_cfg.base_lr = t_lr;
      if (t_seed) t_cfg.seed = t_seed;
      if (!t_out.empty()) t_cfg.out_dir = t_out;
      if (t_spatial) t_cfg.model.enable_spatial = true;
      if (t_color) t_cfg.model.enable_color = true;
      if (t_cfg.dataset_path.empty()) {
        std::cerr << "train requires a dataset (--dataset or config)\n";
        return kExitUsage;
      }
      return cmd_train(t_cfg, t_resume);
    }
    if (*traverse)
      return cmd_traverse(tr_ckpt, tr_class, tr_grid, tr_central, tr_out);
    if (*dream)
      return cmd_dream(d_ckpt, d_class, d_count, d_translate, d_rotate,
                       d_scale, d_seed, d_out);
    if (*recon) return cmd_reconstruct(r_ckpt, r_data, r_indices, r_out);
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
