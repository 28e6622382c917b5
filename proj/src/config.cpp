#include "voxelcom/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "voxelcom/checkpoint.hpp"

namespace voxelcom {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad(int line, const std::string& msg) {
  fail(ErrorKind::config, "config line " + std::to_string(line) + ": " + msg);
}

double to_f64(const std::string& v, int line) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) bad(line, "trailing characters in number '" + v + "'");
    if (std::isnan(x)) bad(line, "nan is not a valid value");
    return x;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    bad(line, "expected a number, got '" + v + "'");
  }
}

int64_t to_i64(const std::string& v, int line) {
  try {
    size_t pos = 0;
    long long x = std::stoll(v, &pos);
    if (pos != v.size()) bad(line, "trailing characters in integer '" + v + "'");
    return x;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    bad(line, "expected an integer, got '" + v + "'");
  }
}

uint64_t to_u64(const std::string& v, int line) {
  if (v.empty() || v[0] == '-') bad(line, "expected a non-negative integer, got '" + v + "'");
  try {
    size_t pos = 0;
    unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) bad(line, "trailing characters in integer '" + v + "'");
    return x;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    bad(line, "expected a non-negative integer, got '" + v + "'");
  }
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<double> to_f64_list(const std::string& v, int line) {
  std::vector<double> out;
  for (const auto& tok : split_list(v)) out.push_back(to_f64(tok, line));
  if (out.empty()) bad(line, "empty list");
  return out;
}

std::vector<int> to_int_list(const std::string& v, int line) {
  std::vector<int> out;
  for (const auto& tok : split_list(v)) out.push_back(static_cast<int>(to_i64(tok, line)));
  if (out.empty()) bad(line, "empty list");
  return out;
}

std::array<int64_t, 3> to_dims(const std::string& v, int line) {
  auto toks = split_list(v);
  if (toks.size() == 1) {
    int64_t d = to_i64(toks[0], line);
    return {d, d, d};
  }
  if (toks.size() != 3) bad(line, "dims wants one or three integers");
  return {to_i64(toks[0], line), to_i64(toks[1], line), to_i64(toks[2], line)};
}

// "3.0:qpsk-1/2, 6.0:qpsk-3/4, ..." -> table; "default" -> built-in table.
McsTable to_mcs_table(const std::string& v, int line) {
  if (trim(v) == "default") return default_mcs_table();
  McsTable table;
  std::string cur;
  std::vector<std::string> entries;
  for (char c : v) {
    if (c == ',') {
      entries.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  entries.push_back(cur);
  for (auto& e : entries) {
    std::string t = trim(e);
    size_t colon = t.find(':');
    if (colon == std::string::npos) bad(line, "mcs entry wants 'snr:name', got '" + t + "'");
    double thr = to_f64(trim(t.substr(0, colon)), line);
    McsEntry m = mcs_from_name(trim(t.substr(colon + 1)));
    m.min_snr_db = thr;
    table.push_back(m);
  }
  return table;
}

void check(bool ok, const std::string& msg) {
  if (!ok) fail(ErrorKind::config, "config: " + msg);
}

void validate(const ExperimentConfig& c) {
  const auto& sc = c.scene;
  check(sc.kind == "spheres" || sc.kind == "boxes" || sc.kind == "checker_room" ||
            sc.kind == "empty",
        "scene kind '" + sc.kind + "' unknown (spheres|boxes|checker_room|empty)");
  for (int64_t d : sc.dims) {
    check(d >= 4 && d <= 256, "dims must be in [4,256]");
    check(d % 4 == 0, "dims must be multiples of 4 (the codec folds 2x downsample + 2x patches)");
  }
  check(sc.channels >= 4 && sc.channels <= 16, "channels must be in [4,16]");
  check(sc.views >= 1 && sc.views <= 512, "views must be in [1,512]");
  check(sc.test_views >= 1 && sc.test_views <= 64, "test_views must be in [1,64]");
  check(sc.image_size >= 8 && sc.image_size <= 1024, "image_size must be in [8,1024]");
  check(sc.fov_deg > 10.0 && sc.fov_deg < 120.0, "fov_deg must be in (10,120)");
  check(sc.radius > 0.0 && sc.radius < 100.0, "radius must be in (0,100)");

  check(c.codec.width == 16, "codec width is fixed at 16 in this build");
  check(c.codec.sigma_min == kSigmaMin, "sigma_min is pinned at 1e-3 in this build");
  check(c.codec.lambda > 0, "lambda must be positive");
  check(!c.codec.lambda_sweep.empty(), "lambda_sweep must be non-empty");
  for (double l : c.codec.lambda_sweep) check(l > 0, "lambda_sweep entries must be positive");
  CodecShape s = c.shape();
  if (c.codec.dv >= 0) check(c.codec.dv == s.dv, "dv does not match dims/channels (derived " +
                                                     std::to_string(s.dv) + ")");
  if (c.codec.dz >= 0) check(c.codec.dz == s.dz, "dz does not match dims (derived " +
                                                     std::to_string(s.dz) + ")");

  check(c.jscc.eta > 0 && std::isfinite(c.jscc.eta), "eta must be positive and finite");
  const auto& q = c.jscc.q_levels;
  check(q.size() >= 2, "q_levels wants at least two levels");
  check(q.front() == 0, "q_levels must start at 0");
  for (size_t i = 1; i < q.size(); ++i) check(q[i] > q[i - 1], "q_levels must be strictly ascending");
  check(q.back() <= kKMax, "q_levels must not exceed " + std::to_string(kKMax));

  check(!c.channel.snr_db.empty(), "snr_db must be non-empty");
  for (double v : c.channel.snr_db) check(v > -50.0, "snr_db entries must exceed -50 dB");
  check(!std::isnan(c.channel.snr_est_db), "snr_est_db must be a number");

  const auto& t = c.training;
  check(t.t1 >= 1 && t.t2 >= 1 && t.t3 >= 1, "t1/t2/t3 must be at least 1");
  check(t.lr1 > 0 && t.lr2 > 0 && t.lr3 > 0, "learning rates must be positive");
  check(t.warmup_frac >= 0 && t.warmup_frac <= 0.5, "warmup_frac must be in [0,0.5]");
  check(t.decay > 0 && t.decay <= 1.0, "decay must be in (0,1]");
  check(t.ray_batch >= 16 && t.ray_batch <= (1 << 20), "ray_batch must be in [16,2^20]");
  check(t.ray_steps >= 4 && t.ray_steps <= 1024, "ray_steps must be in [4,1024]");
  check(std::isfinite(t.train_snr_db), "train_snr_db must be finite");
  check(t.log_every >= 1, "log_every must be at least 1");

  check(c.baseline.K >= 2 && c.baseline.K <= (1 << 16), "baseline k must be in [2,65536]");
  check(c.baseline.iters >= 1 && c.baseline.iters <= 1000, "baseline iters must be in [1,1000]");
  check(!c.baseline.mcs_table.empty(), "baseline mcs_table must be non-empty");
  for (size_t i = 1; i < c.baseline.mcs_table.size(); ++i)
    check(c.baseline.mcs_table[i].min_snr_db > c.baseline.mcs_table[i - 1].min_snr_db,
          "baseline mcs_table thresholds must be ascending");
}

}  // namespace

CodecShape ExperimentConfig::shape() const {
  return CodecShape::from_grid(static_cast<int>(scene.dims[0]), static_cast<int>(scene.dims[1]),
                               static_cast<int>(scene.dims[2]),
                               static_cast<int>(scene.channels));
}

McsEntry mcs_from_name(const std::string& name) {
  for (const McsEntry& m : default_mcs_table()) {
    std::string id = std::string(mod_name(m.mod)) + "-" + std::to_string(m.rate_num) + "/" +
                     std::to_string(m.rate_den);
    if (id == name) return m;
  }
  fail(ErrorKind::config,
       "config: unknown mcs '" + name + "' (qpsk-1/2|qpsk-3/4|qam16-1/2|qam16-2/3)");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::set<std::string> seen;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = trim(raw);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') bad(line, "unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section != "scene" && section != "codec" && section != "jscc" &&
          section != "channel" && section != "training" && section != "baseline")
        bad(line, "unknown section [" + section + "]");
      continue;
    }
    size_t eq = s.find('=');
    if (eq == std::string::npos) bad(line, "expected key = value");
    if (section.empty()) bad(line, "key outside any section");
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    if (key.empty()) bad(line, "empty key");
    if (val.empty()) bad(line, "empty value for '" + key + "'");
    std::string full = section + "." + key;
    if (!seen.insert(full).second) bad(line, "duplicate key '" + full + "'");

    if (full == "scene.kind") cfg.scene.kind = val;
    else if (full == "scene.dims") cfg.scene.dims = to_dims(val, line);
    else if (full == "scene.channels") cfg.scene.channels = to_i64(val, line);
    else if (full == "scene.views") cfg.scene.views = static_cast<int>(to_i64(val, line));
    else if (full == "scene.test_views") cfg.scene.test_views = static_cast<int>(to_i64(val, line));
    else if (full == "scene.image_size") cfg.scene.image_size = static_cast<int>(to_i64(val, line));
    else if (full == "scene.fov_deg") cfg.scene.fov_deg = to_f64(val, line);
    else if (full == "scene.radius") cfg.scene.radius = to_f64(val, line);
    else if (full == "scene.seed") cfg.scene.seed = to_u64(val, line);
    else if (full == "codec.width") cfg.codec.width = static_cast<int>(to_i64(val, line));
    else if (full == "codec.dv") cfg.codec.dv = static_cast<int>(to_i64(val, line));
    else if (full == "codec.dz") cfg.codec.dz = static_cast<int>(to_i64(val, line));
    else if (full == "codec.lambda") cfg.codec.lambda = to_f64(val, line);
    else if (full == "codec.lambda_sweep") cfg.codec.lambda_sweep = to_f64_list(val, line);
    else if (full == "codec.sigma_min") cfg.codec.sigma_min = to_f64(val, line);
    else if (full == "jscc.eta") cfg.jscc.eta = to_f64(val, line);
    else if (full == "jscc.q_levels") cfg.jscc.q_levels = to_int_list(val, line);
    else if (full == "jscc.side_mcs") cfg.jscc.side_mcs = mcs_from_name(val);
    else if (full == "channel.snr_db") cfg.channel.snr_db = to_f64_list(val, line);
    else if (full == "channel.snr_est_db") cfg.channel.snr_est_db = to_f64(val, line);
    else if (full == "channel.seed") cfg.channel.seed = to_u64(val, line);
    else if (full == "training.t1") cfg.training.t1 = static_cast<int>(to_i64(val, line));
    else if (full == "training.t2") cfg.training.t2 = static_cast<int>(to_i64(val, line));
    else if (full == "training.t3") cfg.training.t3 = static_cast<int>(to_i64(val, line));
    else if (full == "training.lr1") cfg.training.lr1 = to_f64(val, line);
    else if (full == "training.lr2") cfg.training.lr2 = to_f64(val, line);
    else if (full == "training.lr3") cfg.training.lr3 = to_f64(val, line);
    else if (full == "training.warmup_frac") cfg.training.warmup_frac = to_f64(val, line);
    else if (full == "training.decay") cfg.training.decay = to_f64(val, line);
    else if (full == "training.ray_batch") cfg.training.ray_batch = static_cast<int>(to_i64(val, line));
    else if (full == "training.ray_steps") cfg.training.ray_steps = static_cast<int>(to_i64(val, line));
    else if (full == "training.train_snr_db") cfg.training.train_snr_db = to_f64(val, line);
    else if (full == "training.log_every") cfg.training.log_every = static_cast<int>(to_i64(val, line));
    else if (full == "baseline.k") cfg.baseline.K = to_i64(val, line);
    else if (full == "baseline.iters") cfg.baseline.iters = static_cast<int>(to_i64(val, line));
    else if (full == "baseline.mcs_table") cfg.baseline.mcs_table = to_mcs_table(val, line);
    else bad(line, "unknown key '" + key + "' in section [" + section + "]");
  }
  cfg.training.lambda = cfg.codec.lambda;
  validate(cfg);
  return cfg;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream probe(path);
  if (!probe) fail(ErrorKind::config, "config file not found: " + path);
  probe.close();
  return parse_config(read_text_file(path));
}

uint64_t effective_seed(const ExperimentConfig& cfg, std::optional<uint64_t> cli_seed) {
  if (cli_seed) return *cli_seed;
  if (const char* env = std::getenv("VOXELCOM_SEED")) {
    std::string v(env);
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
      fail(ErrorKind::config, "VOXELCOM_SEED must be a non-negative integer, got '" + v + "'");
    return std::stoull(v);
  }
  return cfg.scene.seed;
}

uint64_t fold_seed(uint64_t seed, const std::string& label) {
  return seed ^ fnv1a64(label.data(), label.size());
}

}  // namespace voxelcom
