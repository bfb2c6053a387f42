#include "dlfs/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "dlfs/errors.hpp"
#include "dlfs/tensor_io.hpp"

namespace dlfs {

namespace {

constexpr const char* kOptimizerRecord = "__optimizer__";

double u64_hi(uint64_t v) { return static_cast<double>(v >> 32); }
double u64_lo(uint64_t v) { return static_cast<double>(v & 0xffffffffull); }
uint64_t u64_join(double hi, double lo) {
  return (static_cast<uint64_t>(hi) << 32) | static_cast<uint64_t>(lo);
}

// step_count, adam_m..., adam_v... per parameter in sorted order, then the
// train-state scalars
Tensor pack_optimizer(const ModelParams& params, const TrainState& state) {
  int64_t len = 7;
  for (const auto& [name, p] : params.params) len += 1 + 2 * p.value.size();
  Tensor out({len});
  int64_t off = 0;
  for (const auto& [name, p] : params.params) {
    out[off++] = static_cast<double>(p.step_count);
    for (int64_t i = 0; i < p.adam_m.size(); ++i) out[off++] = p.adam_m[i];
    for (int64_t i = 0; i < p.adam_v.size(); ++i) out[off++] = p.adam_v[i];
  }
  out[off++] = static_cast<double>(state.epoch);
  out[off++] = u64_hi(state.rng_base);
  out[off++] = u64_lo(state.rng_base);
  out[off++] = u64_hi(state.rng_counter);
  out[off++] = u64_lo(state.rng_counter);
  out[off++] = state.best_val_metric;
  out[off++] = static_cast<double>(state.best_epoch);
  return out;
}

TrainState unpack_optimizer(ModelParams& params, const Tensor& rec) {
  int64_t want = 7;
  for (const auto& [name, p] : params.params) want += 1 + 2 * p.value.size();
  if (rec.size() != want) throw ShapeMismatch("optimizer record length");
  int64_t off = 0;
  for (auto& [name, p] : params.params) {
    p.step_count = static_cast<int64_t>(rec[off++]);
    for (int64_t i = 0; i < p.adam_m.size(); ++i) p.adam_m[i] = rec[off++];
    for (int64_t i = 0; i < p.adam_v.size(); ++i) p.adam_v[i] = rec[off++];
  }
  TrainState state;
  state.epoch = static_cast<int64_t>(rec[off++]);
  const double bh = rec[off++], bl = rec[off++];
  state.rng_base = u64_join(bh, bl);
  const double ch = rec[off++], cl = rec[off++];
  state.rng_counter = u64_join(ch, cl);
  state.best_val_metric = rec[off++];
  state.best_epoch = static_cast<int64_t>(rec[off++]);
  return state;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params, const TrainState& state) {
  // records serialized first so the manifest can carry their offsets
  std::ostringstream records(std::ios::binary);
  std::ostringstream manifest;
  int64_t offset = 0;
  auto emit = [&](const std::string& name, const Tensor& t) {
    manifest << name << '\t' << offset << '\n';
    write_tensor(records, t);
    offset += tensor_record_size(t);
  };
  for (const auto& [name, p] : params.params) emit(name, p.value);
  emit(kOptimizerRecord, pack_optimizer(params, state));
  manifest << '\n';

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path);
  const std::string m = manifest.str(), r = records.str();
  os.write(m.data(), static_cast<std::streamsize>(m.size()));
  os.write(r.data(), static_cast<std::streamsize>(r.size()));
  if (!os) throw IoError("write failed: " + path);
}

namespace {

std::vector<std::pair<std::string, int64_t>> read_checkpoint_manifest(std::istream& is) {
  std::vector<std::pair<std::string, int64_t>> entries;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) break;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) throw BadMagic("checkpoint manifest line without tab");
    entries.emplace_back(line.substr(0, tab), std::stoll(line.substr(tab + 1)));
  }
  if (entries.empty() || entries.back().first != kOptimizerRecord)
    throw BadMagic("checkpoint missing optimizer record");
  return entries;
}

}  // namespace

std::vector<int64_t> checkpoint_record_shape(const std::string& path, const std::string& name) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFile(path);
  const auto entries = read_checkpoint_manifest(is);
  const std::streampos payload = is.tellg();
  for (const auto& [entry, offset] : entries)
    if (entry == name) {
      is.seekg(payload + static_cast<std::streamoff>(offset));
      return read_tensor(is).shape();
    }
  throw BadMagic("checkpoint has no record " + name);
}

TrainState load_checkpoint(const std::string& path, ModelParams& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFile(path);
  const auto entries = read_checkpoint_manifest(is);
  const std::streampos payload = is.tellg();

  size_t seen = 0;
  Tensor optimizer;
  for (const auto& [name, offset] : entries) {
    is.seekg(payload + static_cast<std::streamoff>(offset));
    Tensor t = read_tensor(is);
    if (name == kOptimizerRecord) {
      optimizer = std::move(t);
      continue;
    }
    auto it = params.params.find(name);
    if (it == params.params.end()) throw ShapeMismatch("checkpoint has unknown parameter " + name);
    if (it->second.value.shape() != t.shape())
      throw ShapeMismatch("checkpoint shape for " + name);
    it->second.value = std::move(t);
    ++seen;
  }
  if (seen != params.params.size()) throw ShapeMismatch("checkpoint parameter count");
  return unpack_optimizer(params, optimizer);
}

}  // namespace dlfs
