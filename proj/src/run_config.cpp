#include "dlfs/run_config.hpp"

#include <fstream>
#include <sstream>

#include "dlfs/errors.hpp"

namespace dlfs {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw BadConfig("bad integer for " + key + ": " + v);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw BadConfig("bad number for " + key + ": " + v);
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw BadConfig("bad unsigned integer for " + key + ": " + v);
  }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v, char sep) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(parse_int(key, trim(item)));
  if (out.empty()) throw BadConfig("empty list for " + key);
  return out;
}

std::vector<DlfsScaleConfig> parse_scales(const std::string& v) {
  std::vector<DlfsScaleConfig> scales;
  if (trim(v).empty()) return scales;
  std::stringstream ss(v);
  std::string stage;
  while (std::getline(ss, stage, ';')) {
    const std::vector<int> parts = parse_int_list("scales", trim(stage), ':');
    if (parts.size() != 2 && parts.size() != 4)
      throw BadConfig("scale stage needs K:C or K:C:kernel:stride, got " + stage);
    DlfsScaleConfig sc;
    sc.keypoints = parts[0];
    sc.conv_channels = parts[1];
    if (parts.size() == 4) {
      sc.pyramid_kernel = parts[2];
      sc.pyramid_stride = parts[3];
    }
    scales.push_back(sc);
  }
  return scales;
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw BadConfig("line " + std::to_string(line_no) + " is not key=value: " + t);
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));

    if (key == "input_size")
      cfg.model.input_size = parse_int(key, value);
    else if (key == "channels")
      cfg.model.channels = parse_int_list(key, value, ',');
    else if (key == "num_classes")
      cfg.model.num_classes = parse_int(key, value);
    else if (key == "g_dim")
      cfg.model.g_dim = parse_int(key, value);
    else if (key == "vi_pool")
      cfg.model.vi_pool = parse_int(key, value);
    else if (key == "scales")
      cfg.model.dlfs.scales = parse_scales(value);
    else if (key == "lr")
      cfg.train.lr = parse_double(key, value);
    else if (key == "lr_decay")
      cfg.train.lr_decay = parse_double(key, value);
    else if (key == "decay_epochs")
      cfg.train.decay_epochs = parse_int(key, value);
    else if (key == "batch_size")
      cfg.train.batch_size = parse_int(key, value);
    else if (key == "epochs")
      cfg.train.epochs = parse_int(key, value);
    else if (key == "lambda1")
      cfg.train.lambda1 = parse_double(key, value);
    else if (key == "lambda2")
      cfg.train.lambda2 = parse_double(key, value);
    else if (key == "lambda3")
      cfg.train.lambda3 = parse_double(key, value);
    else if (key == "triplet_margin")
      cfg.train.triplet_margin = parse_double(key, value);
    else if (key == "seed")
      cfg.train.seed = parse_u64(key, value);
    else if (key == "threads")
      cfg.train.threads = parse_int(key, value);
    else
      throw BadConfig("unknown key " + key);
  }
  // the loss weights live in both structs; the file sets them once
  cfg.model.lambda1 = cfg.train.lambda1;
  cfg.model.lambda2 = cfg.train.lambda2;
  cfg.model.lambda3 = cfg.train.lambda3;
  cfg.model.seed = cfg.train.seed;
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFile(path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_run_config_text(buf.str());
}

}  // namespace dlfs
