#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "voxelcom/channel.hpp"

using namespace voxelcom;

namespace {

std::vector<uint8_t> random_bits(size_t count, Rng& rng) {
  std::vector<uint8_t> b(count);
  for (auto& x : b) x = static_cast<uint8_t>(rng.uniform_int(2));
  return b;
}

// Full-constellation LLR, no per-axis factorization.
double brute_llr(cplx y, Mod m, double noise_var, int bit) {
  const int bps = bits_per_symbol(m);
  double s0 = 0, s1 = 0;
  for (int pattern = 0; pattern < (1 << bps); ++pattern) {
    std::vector<uint8_t> bits(bps);
    for (int j = 0; j < bps; ++j) bits[j] = (pattern >> (bps - 1 - j)) & 1;
    cplx s = qam_map(bits, m)[0];
    double w = std::exp(-std::norm(y - s) / noise_var);
    (bits[bit] ? s1 : s0) += w;
  }
  return std::log(s0) - std::log(s1);
}

}  // namespace

TEST_CASE("qpsk map matches the declared table and has unit energy") {
  const double a = 1.0 / std::sqrt(2.0);
  struct Row {
    uint8_t b0, b1;
    double re, im;
  };
  const Row rows[] = {{0, 0, a, a}, {0, 1, a, -a}, {1, 0, -a, a}, {1, 1, -a, -a}};
  double energy = 0;
  for (const auto& r : rows) {
    auto s = qam_map({r.b0, r.b1}, Mod::qpsk);
    REQUIRE(s.size() == 1);
    CHECK(s[0].real() == doctest::Approx(r.re).epsilon(1e-12));
    CHECK(s[0].imag() == doctest::Approx(r.im).epsilon(1e-12));
    energy += std::norm(s[0]);
  }
  CHECK(energy / 4.0 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("qam16 is gray mapped with unit average energy") {
  double energy = 0;
  std::set<std::pair<long, long>> seen;
  std::vector<cplx> by_pattern(16);
  for (int p = 0; p < 16; ++p) {
    std::vector<uint8_t> bits = {static_cast<uint8_t>((p >> 3) & 1), static_cast<uint8_t>((p >> 2) & 1),
                                 static_cast<uint8_t>((p >> 1) & 1), static_cast<uint8_t>(p & 1)};
    auto s = qam_map(bits, Mod::qam16);
    by_pattern[p] = s[0];
    energy += std::norm(s[0]);
    seen.insert({std::lround(s[0].real() * 1e6), std::lround(s[0].imag() * 1e6)});
  }
  CHECK(seen.size() == 16);
  CHECK(energy / 16.0 == doctest::Approx(1.0).epsilon(1e-12));

  // Neighboring constellation points differ in exactly one bit.
  const double step = 2.0 / std::sqrt(10.0);
  for (int p = 0; p < 16; ++p)
    for (int q = p + 1; q < 16; ++q) {
      cplx d = by_pattern[p] - by_pattern[q];
      bool adjacent = std::abs(d) < step * 1.0001 && std::abs(d) > step * 0.9999;
      if (adjacent) CHECK(__builtin_popcount(p ^ q) == 1);
    }
}

TEST_CASE("exact demapper agrees with a full-constellation reference") {
  Rng rng(404);
  for (Mod m : {Mod::qpsk, Mod::qam16}) {
    const int bps = bits_per_symbol(m);
    for (int trial = 0; trial < 50; ++trial) {
      cplx y(2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0);
      double nv = 0.05 + rng.uniform();
      auto llr = qam_soft_demap({y}, m, nv);
      for (int bit = 0; bit < bps; ++bit) {
        double ref = brute_llr(y, m, nv, bit);
        CHECK(llr[bit] == doctest::Approx(ref).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("noiseless demap recovers the sent bits") {
  Rng rng(405);
  for (Mod m : {Mod::qpsk, Mod::qam16}) {
    auto bits = random_bits(400 * bits_per_symbol(m), rng);
    auto sym = qam_map(bits, m);
    auto llr = qam_soft_demap(sym, m, 0.01);
    for (size_t i = 0; i < bits.size(); ++i) CHECK((llr[i] < 0 ? 1 : 0) == bits[i]);
  }
}

TEST_CASE("awgn hits the configured snr and is seed deterministic") {
  Rng bitrng(406);
  auto bits = random_bits(2 * 100000, bitrng);
  auto sym = qam_map(bits, Mod::qpsk);

  Rng n1(505), n2(505), n3(506);
  auto r1 = awgn(sym, 10.0, n1);
  auto r2 = awgn(sym, 10.0, n2);
  auto r3 = awgn(sym, 10.0, n3);
  CHECK(r1 == r2);
  CHECK(r1 != r3);
  CHECK(measured_snr_db(sym, r1) == doctest::Approx(10.0).epsilon(0.03));

  Rng n4(507);
  auto clean = awgn(sym, std::numeric_limits<double>::infinity(), n4);
  CHECK(clean == sym);
}

TEST_CASE("ldpc codes are near regular and encoding satisfies every check") {
  for (auto [num, den, n, cdeg] : {std::array<int, 4>{1, 2, 1024, 6}, std::array<int, 4>{2, 3, 768, 9}}) {
    const LdpcCode& code = code_for_rate(num, den);
    REQUIRE(code.k == 512);
    REQUIRE(code.n == n);
    for (const auto& vc : code.var_checks) CHECK(vc.size() == 3);
    for (const auto& cc : code.check_cols) CHECK(static_cast<int>(cc.size()) == cdeg);
    CHECK(static_cast<int>(code.info_cols.size()) == code.k);
    CHECK(static_cast<int>(code.parity_cols.size()) == code.n - code.k);

    Rng rng(600 + n);
    auto info = random_bits(code.k, rng);
    auto cw = ldpc_encode(info, code);
    for (int j = 0; j < code.k; ++j) CHECK(cw[code.info_cols[j]] == info[j]);
    for (const auto& cc : code.check_cols) {
      int parity = 0;
      for (int v : cc) parity ^= cw[v];
      CHECK(parity == 0);
    }
  }
}

TEST_CASE("ldpc construction is deterministic in the seed") {
  auto a = make_ldpc(64, 128, 3);
  auto b = make_ldpc(64, 128, 3);
  auto c = make_ldpc(64, 128, 4);
  CHECK(a.check_cols == b.check_cols);
  CHECK(a.info_cols == b.info_cols);
  CHECK(a.check_cols != c.check_cols);
}

TEST_CASE("bp decoding recovers clean and lightly corrupted codewords") {
  const LdpcCode& code = code_for_rate(1, 2);
  Rng rng(601);
  auto info = random_bits(code.k, rng);
  auto cw = ldpc_encode(info, code);

  std::vector<double> llr(code.n);
  for (int v = 0; v < code.n; ++v) llr[v] = cw[v] ? -8.0 : 8.0;
  auto clean = ldpc_decode(llr, code);
  CHECK(clean.converged);
  CHECK(clean.iters == 0);
  CHECK(clean.info == info);

  for (int v : {17, 250, 511, 777, 1000}) llr[v] = -llr[v];
  auto fixed = ldpc_decode(llr, code);
  CHECK(fixed.converged);
  CHECK(fixed.info == info);
}

TEST_CASE("rate 1/2 qpsk link is error free in the waterfall region") {
  McsEntry mcs{4.0, Mod::qpsk, 1, 2};
  auto pt = measure_ber(mcs, 4.0, 100000, 42);
  CHECK(pt.bits >= 100000);
  CHECK(pt.ber() < 1e-3);
}

TEST_CASE("lower mcs entries are clean at their thresholds") {
  auto table = default_mcs_table();
  for (size_t i = 0; i + 1 < table.size(); ++i) {
    auto pt = measure_ber(table[i], table[i].min_snr_db, 200000, 77);
    INFO(table[i].str(), " at ", table[i].min_snr_db, " dB: ", pt.errors, " errors");
    CHECK(pt.ber() <= 2e-5);
  }
}

TEST_CASE("an mcs designed for 10 db collapses two db below it") {
  const McsEntry& designed = select_mcs(default_mcs_table(), 10.0);
  CHECK(designed.str() == "qam16-2/3");
  auto matched = measure_ber(designed, 10.0, 400000, 55);
  auto mismatched = measure_ber(designed, 8.0, 100000, 55);
  INFO("ber at 10 dB: ", matched.ber(), ", at 8 dB: ", mismatched.ber());
  CHECK(mismatched.ber() > 1e-2);
  CHECK(matched.ber() < 1e-3);
  CHECK(mismatched.ber() > 30.0 * matched.ber());
}

TEST_CASE("digital link roundtrips without noise and respects odd lengths") {
  Rng rng(602), ch(603);
  auto bits = random_bits(1234, rng);
  auto out = send_bits_digital(bits, {4.0, Mod::qam16, 2, 3},
                               std::numeric_limits<double>::infinity(),
                               std::numeric_limits<double>::infinity(), ch);
  CHECK(out == bits);
}

TEST_CASE("mcs selection picks the highest feasible entry") {
  auto table = default_mcs_table();
  REQUIRE(table.size() == 4);
  for (size_t i = 1; i < table.size(); ++i) CHECK(table[i].min_snr_db > table[i - 1].min_snr_db);
  CHECK(select_mcs(table, -3.0).str() == table[0].str());
  CHECK(select_mcs(table, table[1].min_snr_db).str() == table[1].str());
  CHECK(select_mcs(table, 50.0).str() == table[3].str());
  double mid = 0.5 * (table[2].min_snr_db + table[3].min_snr_db);
  CHECK(select_mcs(table, mid).str() == table[2].str());
}

TEST_CASE("crc16 matches the ccitt-false reference and verifies appended") {
  const char* msg = "123456789";
  uint16_t crc = crc16_ccitt(reinterpret_cast<const uint8_t*>(msg), 9);
  CHECK(crc == 0x29B1);

  std::vector<uint8_t> framed(msg, msg + 9);
  framed.push_back(static_cast<uint8_t>(crc >> 8));
  framed.push_back(static_cast<uint8_t>(crc & 0xFF));
  CHECK(crc16_ccitt(framed.data(), framed.size()) == 0);
}

TEST_CASE("ber csv has the pinned header and row format") {
  std::vector<BerPoint> pts(1);
  pts[0].snr_db = 4.0;
  pts[0].mod = Mod::qpsk;
  pts[0].rate_num = 1;
  pts[0].rate_den = 2;
  pts[0].bits = 1000000;
  pts[0].errors = 12;
  const std::string path = "/tmp/voxelcom_ber_test.csv";
  write_ber_csv(path, pts);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "snr_db,modulation,rate,bits,errors,ber");
  std::getline(f, line);
  CHECK(line == "4.00,qpsk,1/2,1000000,12,1.2e-05");
}
