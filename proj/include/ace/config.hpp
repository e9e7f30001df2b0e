#pragma once

#include <string>

#include "ace/model.hpp"

namespace ace {

// Flat key=value run configuration; CLI flags override file values and the
// ACE_SEED environment variable overrides both.
struct RunConfig {
  std::string dataset_path;
  std::size_t epochs = 30;
  std::size_t batch_size = 250;
  double base_lr = 0.0;  // 0: 0.0015 for grayscale, 0.0005 for RGB
  double decay_epochs = 50.0;
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  double holdout = 0.1;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  AceConfig model;

  double effective_lr() const {
    if (base_lr > 0.0) return base_lr;
    return model.channels == 1 ? 0.0015 : 0.0005;
  }

  void set(const std::string& key, const std::string& value);
  std::string to_text() const;

  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
};

}  // namespace ace
