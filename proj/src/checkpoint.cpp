#include "ace/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace ace {

namespace {

template <class T>
void write_le(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_le(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw FormatError(std::string("checkpoint: truncated ") + what);
  return v;
}

void write_floats(std::ostream& os, const std::vector<float>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void read_floats(std::istream& is, std::vector<float>& v, const char* what) {
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!is) throw FormatError(std::string("checkpoint: truncated ") + what);
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& config,
                     std::size_t epoch, AceModel& model, const Adam& adam) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot write " + path);
  os.write("ACCP", 4);
  write_le<std::uint16_t>(os, 1);
  std::string cfg = config.to_text();
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_le<std::uint64_t>(os, epoch);
  write_le<std::uint64_t>(os, model.rng().key());
  write_le<std::uint64_t>(os, model.rng().counter());

  auto& params = model.params();
  write_le<std::uint64_t>(os, params.size());
  for (auto& p : params) {
    write_le<std::uint16_t>(os, static_cast<std::uint16_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    dump_tensor(p.tensor, os);
  }

  write_le<std::uint64_t>(os, adam.step_count());
  const auto& slots = adam.slots();
  if (!slots.empty() && slots.size() != params.size())
    throw ContractError("checkpoint: optimizer slots do not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (slots.empty()) {
      std::vector<float> zero(params[i].tensor.size(), 0.f);
      write_floats(os, zero);
      write_floats(os, zero);
    } else {
      write_floats(os, slots[i].m);
      write_floats(os, slots[i].v);
    }
  }
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "ACCP", 4) != 0)
    throw FormatError("checkpoint: bad magic in " + path);
  std::uint16_t version = read_le<std::uint16_t>(is, "version");
  if (version != 1)
    throw FormatError("checkpoint: unsupported version " +
                      std::to_string(version));
  std::uint32_t cfg_len = read_le<std::uint32_t>(is, "config length");
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), cfg_len);
  if (!is) throw FormatError("checkpoint: truncated config");

  CheckpointData out;
  out.config = RunConfig::from_text(cfg_text);
  out.epoch = read_le<std::uint64_t>(is, "epoch");
  std::uint64_t rng_key = read_le<std::uint64_t>(is, "rng key");
  std::uint64_t rng_counter = read_le<std::uint64_t>(is, "rng counter");

  out.model = std::make_unique<AceModel>(out.config.model, out.config.seed);
  out.model->set_rng(CounterRng(rng_key, rng_counter));

  std::uint64_t n_params = read_le<std::uint64_t>(is, "param count");
  auto& params = out.model->params();
  if (n_params != params.size())
    throw FormatError("checkpoint: parameter count mismatch (file " +
                      std::to_string(n_params) + ", model " +
                      std::to_string(params.size()) + ")");
  for (auto& p : params) {
    std::uint16_t name_len = read_le<std::uint16_t>(is, "param name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is || name != p.name)
      throw FormatError("checkpoint: parameter order mismatch at '" + p.name +
                        "'");
    Tensor<float> t = load_tensor<float>(is);
    if (t.shape() != p.tensor.shape())
      throw FormatError("checkpoint: shape mismatch for '" + p.name + "'");
    std::copy(t.values().begin(), t.values().end(), p.tensor.values().begin());
  }

  std::uint64_t adam_t = read_le<std::uint64_t>(is, "adam step");
  std::vector<Adam::Slot> slots(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    slots[i].m.resize(params[i].tensor.size());
    slots[i].v.resize(params[i].tensor.size());
    read_floats(is, slots[i].m, "adam m");
    read_floats(is, slots[i].v, "adam v");
  }
  out.adam.restore(std::move(slots), adam_t);
  return out;
}

}  // namespace ace
