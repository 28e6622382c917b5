#include <algorithm>
#include <cmath>
#include <cstring>
#include <queue>

#include "voxelcom/channel.hpp"

namespace voxelcom {
namespace {

constexpr int kVarDegree = 3;

struct BitMatrix {
  int rows = 0, cols = 0, words = 0;
  std::vector<uint64_t> data;
  BitMatrix(int r, int c) : rows(r), cols(c), words((c + 63) / 64), data(static_cast<size_t>(r) * words, 0) {}
  uint64_t* row(int r) { return data.data() + static_cast<size_t>(r) * words; }
  const uint64_t* row(int r) const { return data.data() + static_cast<size_t>(r) * words; }
  void set(int r, int c) { row(r)[c >> 6] ^= (1ull << (c & 63)); }
  bool get(int r, int c) const { return (row(r)[c >> 6] >> (c & 63)) & 1; }
  void xor_rows(int dst, int src) {
    uint64_t* d = row(dst);
    const uint64_t* s = row(src);
    for (int w = 0; w < words; ++w) d[w] ^= s[w];
  }
};

// One PEG pass. Returns empty check_cols when the degree cap made some edge
// impossible (caller retries with the next seed).
std::vector<std::vector<int32_t>> peg_graph(int n, int m, int cap, Rng& rng) {
  std::vector<std::vector<int32_t>> check_cols(m);
  std::vector<std::vector<int32_t>> var_checks(n);
  std::vector<int> depth(m);
  std::vector<char> var_seen(n);

  auto pick = [&](const std::vector<int>& cand) {
    int best_deg = cap + 1;
    for (int c : cand) best_deg = std::min(best_deg, static_cast<int>(check_cols[c].size()));
    std::vector<int> ties;
    for (int c : cand)
      if (static_cast<int>(check_cols[c].size()) == best_deg) ties.push_back(c);
    return ties[rng.uniform_int(ties.size())];
  };

  for (int v = 0; v < n; ++v) {
    for (int e = 0; e < kVarDegree; ++e) {
      std::vector<int> cand;
      if (e == 0) {
        for (int c = 0; c < m; ++c)
          if (static_cast<int>(check_cols[c].size()) < cap) cand.push_back(c);
      } else {
        // BFS from v; candidates are the unreachable checks once the frontier
        // stops growing (classic PEG), else the deepest reachable layer.
        std::fill(depth.begin(), depth.end(), -1);
        std::fill(var_seen.begin(), var_seen.end(), 0);
        var_seen[v] = 1;
        std::vector<int> frontier = var_checks[v];
        for (int c : frontier) depth[c] = 0;
        int reached = static_cast<int>(frontier.size());
        int level = 0;
        while (!frontier.empty() && reached < m) {
          std::vector<int> next;
          for (int c : frontier)
            for (int u : check_cols[c]) {
              if (var_seen[u]) continue;
              var_seen[u] = 1;
              for (int c2 : var_checks[u])
                if (depth[c2] < 0) {
                  depth[c2] = level + 1;
                  next.push_back(c2);
                }
            }
          reached += static_cast<int>(next.size());
          frontier = std::move(next);
          ++level;
        }
        if (reached < m) {
          for (int c = 0; c < m; ++c)
            if (depth[c] < 0 && static_cast<int>(check_cols[c].size()) < cap) cand.push_back(c);
        }
        if (cand.empty()) {
          for (int lvl = level; lvl >= 0 && cand.empty(); --lvl)
            for (int c = 0; c < m; ++c)
              if (depth[c] == lvl && static_cast<int>(check_cols[c].size()) < cap) cand.push_back(c);
        }
      }
      if (cand.empty()) return {};
      int c = pick(cand);
      check_cols[c].push_back(v);
      var_checks[v].push_back(c);
    }
  }
  return check_cols;
}

}  // namespace

LdpcCode make_ldpc(int k, int n, uint64_t seed) {
  if (k <= 0 || n <= k) fail(ErrorKind::config, "ldpc: need 0 < k < n");
  const int m = n - k;
  const int cap = (kVarDegree * n + m - 1) / m;

  for (uint64_t attempt = 0;; ++attempt) {
    Rng rng(Rng::derive(seed + attempt, "ldpc/peg"));
    auto check_cols = peg_graph(n, m, cap, rng);
    if (check_cols.empty()) continue;

    BitMatrix h(m, n);
    for (int c = 0; c < m; ++c)
      for (int v : check_cols[c]) h.set(c, v);

    // Reduce to RREF, preferring pivots in high columns so the info positions
    // stay mostly in the head of the codeword.
    std::vector<int32_t> pivot_cols;
    int rank = 0;
    for (int col = n - 1; col >= 0 && rank < m; --col) {
      int src = -1;
      for (int r = rank; r < m; ++r)
        if (h.get(r, col)) {
          src = r;
          break;
        }
      if (src < 0) continue;
      if (src != rank)
        for (int w = 0; w < h.words; ++w) std::swap(h.row(src)[w], h.row(rank)[w]);
      for (int r = 0; r < m; ++r)
        if (r != rank && h.get(r, col)) h.xor_rows(r, rank);
      pivot_cols.push_back(col);
      ++rank;
    }
    if (rank < m) continue;

    LdpcCode code;
    code.k = k;
    code.n = n;
    code.check_cols = std::move(check_cols);
    code.var_checks.assign(n, {});
    for (int c = 0; c < m; ++c)
      for (int v : code.check_cols[c]) code.var_checks[v].push_back(c);
    code.parity_cols = pivot_cols;
    std::vector<char> is_parity(n, 0);
    for (int c : pivot_cols) is_parity[c] = 1;
    for (int v = 0; v < n; ++v)
      if (!is_parity[v]) code.info_cols.push_back(v);

    const int wk = (k + 63) / 64;
    code.parity_gen.assign(static_cast<size_t>(m) * wk, 0);
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < k; ++j)
        if (h.get(r, code.info_cols[j]))
          code.parity_gen[static_cast<size_t>(r) * wk + (j >> 6)] |= 1ull << (j & 63);
    return code;
  }
}

std::vector<uint8_t> ldpc_encode(const std::vector<uint8_t>& info, const LdpcCode& code) {
  if (static_cast<int>(info.size()) != code.k) fail(ErrorKind::shape, "ldpc_encode: info length != k");
  const int m = code.n - code.k;
  const int wk = (code.k + 63) / 64;
  std::vector<uint64_t> u(wk, 0);
  for (int j = 0; j < code.k; ++j)
    if (info[j] & 1) u[j >> 6] |= 1ull << (j & 63);

  std::vector<uint8_t> cw(code.n, 0);
  for (int j = 0; j < code.k; ++j) cw[code.info_cols[j]] = info[j] & 1;
  for (int r = 0; r < m; ++r) {
    const uint64_t* g = code.parity_gen.data() + static_cast<size_t>(r) * wk;
    uint64_t acc = 0;
    for (int w = 0; w < wk; ++w) acc ^= g[w] & u[w];
    cw[code.parity_cols[r]] = static_cast<uint8_t>(__builtin_popcountll(acc) & 1);
  }
  return cw;
}

LdpcDecodeResult ldpc_decode(const std::vector<double>& llrs, const LdpcCode& code, int max_iters) {
  if (static_cast<int>(llrs.size()) != code.n) fail(ErrorKind::shape, "ldpc_decode: llr length != n");
  const int m = code.n - code.k;

  std::vector<std::vector<double>> r_msg(m);
  for (int c = 0; c < m; ++c) r_msg[c].assign(code.check_cols[c].size(), 0.0);
  std::vector<double> total(llrs);
  std::vector<uint8_t> hard(code.n);
  std::vector<double> t, pre, suf;

  auto syndrome_ok = [&]() {
    for (int v = 0; v < code.n; ++v) hard[v] = total[v] < 0 ? 1 : 0;
    for (int c = 0; c < m; ++c) {
      int p = 0;
      for (int v : code.check_cols[c]) p ^= hard[v];
      if (p) return false;
    }
    return true;
  };

  // Layered schedule: checks are processed serially and posteriors updated in
  // place, which converges in roughly half the iterations of flooding.
  LdpcDecodeResult res;
  for (int it = 0; it < max_iters; ++it) {
    if (syndrome_ok()) {
      res.converged = true;
      res.iters = it;
      break;
    }
    for (int c = 0; c < m; ++c) {
      const auto& cols = code.check_cols[c];
      const int d = static_cast<int>(cols.size());
      t.resize(d);
      pre.assign(d + 1, 1.0);
      suf.assign(d + 1, 1.0);
      for (int i = 0; i < d; ++i) {
        double q = total[cols[i]] - r_msg[c][i];
        double th = std::tanh(0.5 * q);
        t[i] = std::clamp(th, -(1.0 - 1e-12), 1.0 - 1e-12);
      }
      for (int i = 0; i < d; ++i) pre[i + 1] = pre[i] * t[i];
      for (int i = d - 1; i >= 0; --i) suf[i] = suf[i + 1] * t[i];
      for (int i = 0; i < d; ++i) {
        double q = total[cols[i]] - r_msg[c][i];
        double prod = pre[i] * suf[i + 1];
        double r = 2.0 * std::atanh(std::clamp(prod, -(1.0 - 1e-12), 1.0 - 1e-12));
        r = std::clamp(r, -30.0, 30.0);
        total[cols[i]] = q + r;
        r_msg[c][i] = r;
      }
    }
    res.iters = it + 1;
  }
  if (!res.converged && syndrome_ok()) res.converged = true;

  for (int v = 0; v < code.n; ++v) hard[v] = total[v] < 0 ? 1 : 0;
  res.info.resize(code.k);
  for (int j = 0; j < code.k; ++j) res.info[j] = hard[code.info_cols[j]];
  return res;
}

}  // namespace voxelcom
