#include "dlfs/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dlfs/errors.hpp"
#include "dlfs/tensor_io.hpp"

namespace dlfs {

namespace {

constexpr int kNumColors = 6;
constexpr int kNumSignatureShapes = 6;
constexpr int kDistractorShapes[2] = {6, 7};  // ring, small square

const double kPalette[kNumColors][3] = {
    {0.95, 0.20, 0.20},  // red
    {0.20, 0.95, 0.20},  // green
    {0.20, 0.30, 0.95},  // blue
    {0.95, 0.90, 0.15},  // yellow
    {0.90, 0.20, 0.90},  // magenta
    {0.15, 0.90, 0.90},  // cyan
};

bool shape_mask(int shape, int dr, int dc, int r) {
  const double ar = std::abs(dr), ac = std::abs(dc), rr = r;
  switch (shape) {
    case 0: return dr * dr + dc * dc <= r * r;
    case 1: return ar <= 0.8 * rr && ac <= 0.8 * rr;
    case 2: return ar + ac <= rr;
    case 3: return ar <= std::max(1.0, 0.45 * rr) && ac <= rr;
    case 4: return ac <= std::max(1.0, 0.45 * rr) && ar <= rr;
    case 5:
      return (ar <= std::max(1.0, 0.35 * rr) && ac <= rr) ||
             (ac <= std::max(1.0, 0.35 * rr) && ar <= rr);
    case 6: {
      const double d2 = dr * dr + dc * dc;
      return d2 <= r * r && d2 >= 0.3 * r * r;
    }
    default: return ar <= 0.5 * rr && ac <= 0.5 * rr;
  }
}

// low-frequency field: a coarse uniform grid bilinearly upsampled
Tensor smooth_field(Rng& rng, int size, int g) {
  std::vector<double> grid(static_cast<size_t>(g * g));
  for (double& v : grid) v = rng.next_uniform();
  Tensor out({size, size});
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double gr = static_cast<double>(r) * (g - 1) / (size - 1);
      const double gc = static_cast<double>(c) * (g - 1) / (size - 1);
      const int r0 = static_cast<int>(gr), c0 = static_cast<int>(gc);
      const int r1 = std::min(r0 + 1, g - 1), c1 = std::min(c0 + 1, g - 1);
      const double fr = gr - r0, fc = gc - c0;
      out[r * size + c] = (1 - fr) * ((1 - fc) * grid[static_cast<size_t>(r0 * g + c0)] +
                                      fc * grid[static_cast<size_t>(r0 * g + c1)]) +
                          fr * ((1 - fc) * grid[static_cast<size_t>(r1 * g + c0)] +
                                fc * grid[static_cast<size_t>(r1 * g + c1)]);
    }
  return out;
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Complementary channel profiles keep the background cross-modal cosine low
// while object pixels stay perfectly collinear across modalities. The first
// modality gets busy fine-grained clutter, the second an almost flat, very
// smooth field (textured-image-versus-depth asymmetry), and both stay dark
// relative to the objects.
const double kBgMean[2][3] = {{0.22, 0.10, 0.04}, {0.04, 0.06, 0.22}};
const double kBgSwing[2][3] = {{0.28, 0.12, 0.05}, {0.05, 0.08, 0.28}};
const int kBgGrid[2] = {8, 8};

}  // namespace

void SynthConfig::validate() const {
  if (image_size < 12) throw BadConfig("image_size too small");
  if (num_classes < 2 || num_classes > 12) throw BadConfig("num_classes must be in [2,12]");
  if (radius_min < 2 || radius_max < radius_min) throw BadConfig("object radius range");
  if (radius_max > image_size / 4) throw BadConfig("objects too large for the image");
  if (max_distractors < 0 || max_distractors > 2) throw BadConfig("max_distractors in [0,2]");
  if (noise_amp < 0.0 || noise_amp > 1.0) throw BadConfig("noise_amp in [0,1]");
}

std::vector<ObjectSpec> class_signature(int class_id, int num_classes) {
  if (class_id < 0 || class_id >= num_classes) throw BadConfig("class id out of range");
  // The last two classes are binding twins: the same two shapes and the same
  // two colors, swapped pairing, so pooled presence statistics cannot
  // separate them. The remaining classes are distinct shape-color combos.
  if (num_classes >= 2 && class_id >= num_classes - 2) {
    const bool twin = class_id == num_classes - 1;
    return {{4, twin ? 3 : 2}, {5, twin ? 2 : 3}};
  }
  std::vector<ObjectSpec> sig;
  sig.push_back({class_id % 6, class_id % 6});
  sig.push_back({(class_id + 1) % 6, (class_id + 2) % 6});
  if (class_id >= 6) sig.push_back({(class_id + 3) % 6, (class_id + 4) % 6});
  return sig;
}

SceneExample gen_scene(int64_t class_id, Rng& rng, const SynthConfig& config) {
  config.validate();
  if (class_id < 0 || class_id >= config.num_classes)
    throw BadConfig("gen_scene class id " + std::to_string(class_id));
  const int size = config.image_size;

  SceneExample ex;
  ex.label = class_id;
  ex.x_rgb = Tensor({3, size, size});
  ex.x_d = Tensor({3, size, size});
  ex.object_radius = static_cast<int>(rng.uniform_int(config.radius_min, config.radius_max));

  // background: 0.5 pedestal blended toward per-modality structured noise
  Tensor* images[2] = {&ex.x_rgb, &ex.x_d};
  for (int m = 0; m < 2; ++m)
    for (int ch = 0; ch < 3; ++ch) {
      Tensor field = smooth_field(rng, size, kBgGrid[m]);
      const double mean = kBgMean[m][ch], swing = kBgSwing[m][ch];
      for (int p = 0; p < size * size; ++p) {
        const double structured = mean + swing * (field[p] - 0.5);
        (*images[m])[ch * size * size + p] =
            clamp01(0.5 * (1.0 - config.noise_amp) + config.noise_amp * structured);
      }
    }

  // modality-1-only background texture: soft color smudges with no
  // counterpart in the second modality (prints, shadows, reflections).
  // They reuse object colors, so color presence alone cannot identify the
  // class, and they scale with noise_amp like the rest of the background.
  auto paint_smudge = [&](Tensor& img, const double color[3]) {
    const int sr = static_cast<int>(rng.uniform_int(0, size - 1));
    const int sc = static_cast<int>(rng.uniform_int(0, size - 1));
    const int srad = static_cast<int>(rng.uniform_int(2, 5));
    for (int dr = -srad; dr <= srad; ++dr)
      for (int dc = -srad; dc <= srad; ++dc) {
        const int pr = sr + dr, pc = sc + dc;
        if (pr < 0 || pr >= size || pc < 0 || pc >= size) continue;
        const double dist = std::sqrt(static_cast<double>(dr * dr + dc * dc));
        if (dist > srad) continue;
        const double alpha = config.noise_amp * 0.75 * (1.0 - dist / (srad + 1.0));
        for (int ch = 0; ch < 3; ++ch) {
          double& px = img[(ch * size + pr) * size + pc];
          px = clamp01((1.0 - alpha) * px + alpha * color[ch]);
        }
      }
  };
  const int64_t n_rgb_smudges = rng.uniform_int(5, 8);
  for (int64_t i = 0; i < n_rgb_smudges; ++i)
    paint_smudge(ex.x_rgb, kPalette[rng.uniform_int(0, kNumColors - 1)]);
  // depth-only structures without color appearance (bumps, folds)
  const double d_bump[3] = {0.50, 0.50, 0.58};
  const int64_t n_d_smudges = rng.uniform_int(3, 5);
  for (int64_t i = 0; i < n_d_smudges; ++i) paint_smudge(ex.x_d, d_bump);

  // objects: the class signature plus color-shuffled distractor shapes
  std::vector<ObjectSpec> specs = class_signature(static_cast<int>(class_id), config.num_classes);
  const int64_t distractors = rng.uniform_int(0, config.max_distractors);
  for (int64_t i = 0; i < distractors; ++i)
    specs.push_back({kDistractorShapes[rng.uniform_int(0, 1)],
                     static_cast<int>(rng.uniform_int(0, kNumColors - 1))});

  // whole-layout rejection sampling: a bad early placement cannot wedge the
  // remaining objects
  const int r = ex.object_radius;
  const int64_t min_dist_sq = static_cast<int64_t>(2 * r + 1) * (2 * r + 1);
  bool placed = false;
  for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
    ex.object_centers.clear();
    placed = true;
    for (size_t i = 0; i < specs.size(); ++i) {
      const int row = static_cast<int>(rng.uniform_int(r, size - 1 - r));
      const int col = static_cast<int>(rng.uniform_int(r, size - 1 - r));
      for (const auto& [or_, oc] : ex.object_centers) {
        const int64_t dr = row - or_, dc = col - oc;
        if (dr * dr + dc * dc < min_dist_sq) {
          placed = false;
          break;
        }
      }
      if (!placed) break;
      ex.object_centers.emplace_back(row, col);
    }
  }
  if (!placed) throw PlacementFailure("no valid layout after 100 attempts");

  for (size_t i = 0; i < specs.size(); ++i) {
    const double* color = kPalette[specs[i].color];
    const auto& [row, col] = ex.object_centers[i];

    for (int dr = -r; dr <= r; ++dr)
      for (int dc = -r; dc <= r; ++dc) {
        if (!shape_mask(specs[i].shape, dr, dc, r)) continue;
        const int pr = row + dr, pc = col + dc;
        const double dist = std::sqrt(static_cast<double>(dr * dr + dc * dc));
        const double gain = 1.0 - 0.35 * std::min(1.0, dist / r);
        for (int ch = 0; ch < 3; ++ch) {
          ex.x_rgb[(ch * size + pr) * size + pc] = clamp01(gain * color[ch]);
          ex.x_d[(ch * size + pr) * size + pc] = clamp01(gain * color[ch]);
        }
      }
  }
  return ex;
}

std::string manifest_path(const std::string& dir) { return dir + "/manifest.txt"; }

namespace {

std::string centers_str(const std::vector<std::pair<int, int>>& centers) {
  std::string out;
  for (size_t i = 0; i < centers.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(centers[i].first) + "," + std::to_string(centers[i].second);
  }
  return out;
}

std::vector<std::pair<int, int>> parse_centers(const std::string& s) {
  std::vector<std::pair<int, int>> centers;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const size_t comma = item.find(',');
    if (comma == std::string::npos) throw BadManifest("center entry " + item);
    centers.emplace_back(std::stoi(item.substr(0, comma)), std::stoi(item.substr(comma + 1)));
  }
  return centers;
}

void write_manifest(const DatasetManifest& m, const std::string& dir) {
  std::ofstream os(manifest_path(dir), std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write manifest in " + dir);
  os << "num_classes=" << m.num_classes << "\n";
  os << "seed=" << m.seed << "\n";
  os << "version=" << m.version << "\n";
  os << "radius=" << m.radius << "\n";
  os << "image_size=" << m.image_size << "\n";
  os << "noise_amp=" << m.noise_amp << "\n";
  os << "train_count=" << m.train_count << "\n";
  os << "val_count=" << m.val_count << "\n";
  os << "test_count=" << m.test_count << "\n";
  for (const ManifestSample& s : m.samples)
    os << s.split << '\t' << s.label << '\t' << centers_str(s.centers) << '\t' << s.rgb_file
       << '\t' << s.d_file << '\n';
  if (!os) throw IoError("manifest write failed");
}

}  // namespace

DatasetManifest gen_dataset(const GenDatasetConfig& config, uint64_t seed,
                            const std::string& out_dir) {
  config.synth.validate();
  if (config.train_pool < config.synth.num_classes || config.test_count < 0)
    throw BadConfig("split sizes");
  std::filesystem::create_directories(out_dir);

  const int n = config.synth.num_classes;
  DatasetManifest m;
  m.num_classes = n;
  m.seed = seed;
  m.version = 1;
  m.radius = config.synth.radius_max;
  m.image_size = config.synth.image_size;
  m.noise_amp = config.synth.noise_amp;
  m.dir = out_dir;

  // stratified per-class counts, remainder spread over the first classes
  auto per_class = [n](int64_t total) {
    std::vector<int64_t> counts(static_cast<size_t>(n), total / n);
    for (int64_t i = 0; i < total % n; ++i) counts[static_cast<size_t>(i)] += 1;
    return counts;
  };
  const std::vector<int64_t> pool_counts = per_class(config.train_pool);
  const std::vector<int64_t> test_counts = per_class(config.test_count);

  Rng root(seed);
  int64_t sample_index = 0;
  auto emit = [&](const std::string& split, int64_t label) {
    Rng sample_rng = root.split(static_cast<uint64_t>(sample_index));
    SceneExample ex = gen_scene(label, sample_rng, config.synth);
    char base[32];
    std::snprintf(base, sizeof(base), "s%05lld", static_cast<long long>(sample_index));
    ManifestSample ms;
    ms.split = split;
    ms.label = label;
    ms.centers = ex.object_centers;
    ms.rgb_file = std::string(base) + "_rgb.dten";
    ms.d_file = std::string(base) + "_d.dten";
    save_tensor(out_dir + "/" + ms.rgb_file, ex.x_rgb);
    save_tensor(out_dir + "/" + ms.d_file, ex.x_d);
    m.samples.push_back(std::move(ms));
    ++sample_index;
  };

  // the 20% validation carve-out is a per-class random subset of the pool
  for (int c = 0; c < n; ++c) {
    const int64_t pool = pool_counts[static_cast<size_t>(c)];
    const int64_t val = pool / 5;
    std::vector<int64_t> order(static_cast<size_t>(pool));
    for (int64_t i = 0; i < pool; ++i) order[static_cast<size_t>(i)] = i;
    for (int64_t i = pool - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(root.uniform_int(0, i))]);
    std::vector<bool> is_val(static_cast<size_t>(pool), false);
    for (int64_t i = 0; i < val; ++i) is_val[static_cast<size_t>(order[static_cast<size_t>(i)])] = true;
    for (int64_t i = 0; i < pool; ++i) {
      emit(is_val[static_cast<size_t>(i)] ? "val" : "train", c);
      if (is_val[static_cast<size_t>(i)])
        m.val_count += 1;
      else
        m.train_count += 1;
    }
  }
  for (int c = 0; c < n; ++c)
    for (int64_t i = 0; i < test_counts[static_cast<size_t>(c)]; ++i) {
      emit("test", c);
      m.test_count += 1;
    }

  write_manifest(m, out_dir);
  return m;
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFile(path);
  DatasetManifest m;
  m.dir = std::filesystem::path(path).parent_path().string();
  if (m.dir.empty()) m.dir = ".";
  std::string line;
  bool header_done = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (!header_done && line.find('=') != std::string::npos && line.find('\t') == std::string::npos) {
      const size_t eq = line.find('=');
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      try {
        if (key == "num_classes")
          m.num_classes = std::stoi(val);
        else if (key == "seed")
          m.seed = std::stoull(val);
        else if (key == "version")
          m.version = std::stoi(val);
        else if (key == "radius")
          m.radius = std::stoi(val);
        else if (key == "image_size")
          m.image_size = std::stoi(val);
        else if (key == "noise_amp")
          m.noise_amp = std::stod(val);
        else if (key == "train_count")
          m.train_count = std::stoll(val);
        else if (key == "val_count")
          m.val_count = std::stoll(val);
        else if (key == "test_count")
          m.test_count = std::stoll(val);
        else
          throw BadManifest("unknown header key " + key);
      } catch (const std::invalid_argument&) {
        throw BadManifest("bad header value in " + line);
      }
      continue;
    }
    header_done = true;
    std::stringstream ss(line);
    std::string split, label, centers, rgb_file, d_file;
    if (!std::getline(ss, split, '\t') || !std::getline(ss, label, '\t') ||
        !std::getline(ss, centers, '\t') || !std::getline(ss, rgb_file, '\t') ||
        !std::getline(ss, d_file, '\t'))
      throw BadManifest("sample line " + line);
    if (split != "train" && split != "val" && split != "test")
      throw BadManifest("unknown split " + split);
    ManifestSample s;
    s.split = split;
    try {
      s.label = std::stoll(label);
    } catch (const std::invalid_argument&) {
      throw BadManifest("bad label in " + line);
    }
    s.centers = parse_centers(centers);
    s.rgb_file = rgb_file;
    s.d_file = d_file;
    m.samples.push_back(std::move(s));
  }
  if (m.num_classes < 2 || m.samples.empty()) throw BadManifest("incomplete manifest " + path);
  return m;
}

const std::vector<SceneExample>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw BadConfig("unknown split " + name);
}

Dataset load_dataset(const std::string& path) {
  Dataset ds;
  ds.manifest = read_manifest(path);
  for (const ManifestSample& s : ds.manifest.samples) {
    SceneExample ex;
    ex.x_rgb = load_tensor(ds.manifest.dir + "/" + s.rgb_file);
    ex.x_d = load_tensor(ds.manifest.dir + "/" + s.d_file);
    ex.label = s.label;
    ex.object_centers = s.centers;
    ex.object_radius = ds.manifest.radius;
    auto& dst = s.split == "train" ? ds.train : (s.split == "val" ? ds.val : ds.test);
    dst.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace dlfs
