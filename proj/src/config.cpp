#include "ace/config.hpp"

#include <fstream>
#include <sstream>

namespace ace {

namespace {

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoul(item));
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "dataset") dataset_path = value;
  else if (key == "epochs") epochs = std::stoul(value);
  else if (key == "batch_size") batch_size = std::stoul(value);
  else if (key == "lr") base_lr = std::stod(value);
  else if (key == "decay_epochs") decay_epochs = std::stod(value);
  else if (key == "seed") seed = std::stoull(value);
  else if (key == "out") out_dir = value;
  else if (key == "holdout") holdout = std::stod(value);
  else if (key == "checkpoint_every") checkpoint_every = std::stoul(value);
  else if (key == "channels") model.channels = std::stoul(value);
  else if (key == "height") model.height = std::stoul(value);
  else if (key == "width") model.width = std::stoul(value);
  else if (key == "classes") model.n_classes = std::stoul(value);
  else if (key == "latent") model.n_latent = std::stoul(value);
  else if (key == "family")
    model.family = value == "laplacian" ? Family::laplacian : Family::gaussian;
  else if (key == "spatial") model.enable_spatial = value == "1" || value == "true";
  else if (key == "color") model.enable_color = value == "1" || value == "true";
  else if (key == "jitter") model.stat_jitter = std::stof(value);
  else if (key == "weight_decay") model.weight_decay = std::stod(value);
  else if (key == "encoder_conv") model.encoder.conv_channels = parse_sizes(value);
  else if (key == "encoder_kernel") model.encoder.conv_kernel = std::stoul(value);
  else if (key == "encoder_fc") model.encoder.fc_sizes = parse_sizes(value);
  else if (key == "decoder_fc") model.decoder.fc_sizes = parse_sizes(value);
  else if (key == "decoder_deconv") model.decoder.deconv_channels = parse_sizes(value);
  else if (key == "decoder_kernel") model.decoder.deconv_kernel = std::stoul(value);
  else if (key == "classifier_conv") model.classifier.conv_channels = parse_sizes(value);
  else if (key == "classifier_kernel") model.classifier.conv_kernel = std::stoul(value);
  else if (key == "classifier_fc") model.classifier.fc_size = std::stoul(value);
  else if (key == "dropout_input") model.classifier.dropout_input = std::stod(value);
  else if (key == "dropout_hidden") model.classifier.dropout_hidden = std::stod(value);
  else if (key == "locnet_conv") model.locnet.conv_channels = parse_sizes(value);
  else if (key == "locnet_kernel") model.locnet.conv_kernel = std::stoul(value);
  else if (key == "locnet_fc") model.locnet.fc_size = std::stoul(value);
  else
    throw ContractError("unknown config key '" + key + "'");
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "dataset=" << dataset_path << "\n";
  os << "epochs=" << epochs << "\n";
  os << "batch_size=" << batch_size << "\n";
  os << "lr=" << base_lr << "\n";
  os << "decay_epochs=" << decay_epochs << "\n";
  os << "seed=" << seed << "\n";
  os << "out=" << out_dir << "\n";
  os << "holdout=" << holdout << "\n";
  os << "checkpoint_every=" << checkpoint_every << "\n";
  os << "channels=" << model.channels << "\n";
  os << "height=" << model.height << "\n";
  os << "width=" << model.width << "\n";
  os << "classes=" << model.n_classes << "\n";
  os << "latent=" << model.n_latent << "\n";
  os << "family=" << (model.family == Family::laplacian ? "laplacian" : "gaussian") << "\n";
  os << "spatial=" << (model.enable_spatial ? 1 : 0) << "\n";
  os << "color=" << (model.enable_color ? 1 : 0) << "\n";
  os << "jitter=" << model.stat_jitter << "\n";
  os << "weight_decay=" << model.weight_decay << "\n";
  os << "encoder_conv=" << join_sizes(model.encoder.conv_channels) << "\n";
  os << "encoder_kernel=" << model.encoder.conv_kernel << "\n";
  os << "encoder_fc=" << join_sizes(model.encoder.fc_sizes) << "\n";
  os << "decoder_fc=" << join_sizes(model.decoder.fc_sizes) << "\n";
  os << "decoder_deconv=" << join_sizes(model.decoder.deconv_channels) << "\n";
  os << "decoder_kernel=" << model.decoder.deconv_kernel << "\n";
  os << "classifier_conv=" << join_sizes(model.classifier.conv_channels) << "\n";
  os << "classifier_kernel=" << model.classifier.conv_kernel << "\n";
  os << "classifier_fc=" << model.classifier.fc_size << "\n";
  os << "dropout_input=" << model.classifier.dropout_input << "\n";
  os << "dropout_hidden=" << model.classifier.dropout_hidden << "\n";
  os << "locnet_conv=" << join_sizes(model.locnet.conv_channels) << "\n";
  os << "locnet_kernel=" << model.locnet.conv_kernel << "\n";
  os << "locnet_fc=" << model.locnet.fc_size << "\n";
  return os.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line without '=': " + line);
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (!value.empty() && value.back() == '\r') value.pop_back();
    cfg.set(key, value);
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str());
}

}  // namespace ace
