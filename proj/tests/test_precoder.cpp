#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "cfmm/precoder.hpp"
#include "support/test_util.hpp"

using namespace cfmm;

namespace {

cvec basis(std::size_t n, std::size_t i, cplx scale = cplx(1, 0)) {
  cvec v(n, cplx(0, 0));
  v[i] = scale;
  return v;
}

// Synthetic effective channels with explicit serving structure; every
// channel starts at zero.
EffectiveChannels make_eff(int L, int K, int N_RF,
                           std::vector<std::vector<int>> served) {
  EffectiveChannels eff;
  eff.L = L;
  eff.K = K;
  eff.N_RF = N_RF;
  eff.served_ues = std::move(served);
  eff.serving_aps.assign(static_cast<std::size_t>(K), {});
  for (int l = 0; l < L; ++l)
    for (int k : eff.served_ues[static_cast<std::size_t>(l)])
      eff.serving_aps[static_cast<std::size_t>(k)].push_back(l);
  eff.hbar.assign(static_cast<std::size_t>(L) * static_cast<std::size_t>(K),
                  cvec(static_cast<std::size_t>(N_RF), cplx(0, 0)));
  eff.row_ue.assign(static_cast<std::size_t>(L),
                    std::vector<int>(static_cast<std::size_t>(N_RF), kPaddingUe));
  return eff;
}

SystemConfig small_cfg(int L, int K, int N, int N_RF, int M) {
  SystemConfig cfg;
  cfg.L = L;
  cfg.K = K;
  cfg.N = N;
  cfg.N_RF = N_RF;
  cfg.cluster_size = M;
  cfg.validate();
  return cfg;
}

struct DropFixture {
  SystemConfig cfg;
  Topology topo;
  ChannelSet cs;
  EffectiveChannels eff;
};

DropFixture random_drop(const SystemConfig& cfg, std::uint64_t seed) {
  DropFixture f;
  f.cfg = cfg;
  std::mt19937_64 rng(seed);
  f.topo = generate_drop(cfg, rng);
  const auto gains = large_scale_matrix(f.topo, cfg, rng);
  form_clusters(f.topo, gains, cfg);
  f.cs = generate_channels(f.topo, gains, cfg, rng);
  const BeamAssignment assign = two_stage_assignment(f.cs, f.topo, cfg);
  f.eff = effective_channels(f.cs, assign, f.topo);
  return f;
}

// Random feasible state: every served link gets a random precoder, then each
// AP is normalized to exactly its power budget.
void randomize_state(PrecoderState& st, const EffectiveChannels& eff,
                     const SystemConfig& cfg, std::mt19937_64& rng) {
  for (int l = 0; l < eff.L; ++l) {
    const auto& served = eff.served_ues[static_cast<std::size_t>(l)];
    if (served.empty()) continue;
    double p = 0.0;
    for (int k : served) {
      st.z[st.idx(l, k)] =
          testutil::random_cvec(static_cast<std::size_t>(eff.N_RF), rng);
      p += norm2_sq(st.z_at(l, k));
    }
    const double c = std::sqrt(cfg.P_max / p);
    for (int k : served)
      for (cplx& v : st.z[st.idx(l, k)]) v *= c;
  }
}

// Independent per-UE receive sums, written as raw loops so library code is
// not on its own oracle path.
struct RawSums {
  cplx d{0, 0};
  double total = 0.0;
  double signal = 0.0;
};

RawSums raw_sums(const PrecoderState& st, const EffectiveChannels& eff, int k) {
  RawSums s;
  for (int i = 0; i < eff.K; ++i) {
    for (int l : eff.serving_aps[static_cast<std::size_t>(i)]) {
      cplx v(0, 0);
      const cvec& h = eff.at(l, k);
      const cvec& z = st.z_at(l, i);
      for (std::size_t r = 0; r < h.size(); ++r) v += std::conj(h[r]) * z[r];
      s.total += std::norm(v);
      if (i == k) {
        s.d += v;
        s.signal += std::norm(v);
      }
    }
  }
  return s;
}

}  // namespace

TEST_CASE("effective channels pick the selected beam entries row by row") {
  // One AP, one UE, N = 4 beams, 2 RF chains carrying beams 2 and 0.
  Topology topo;
  topo.ap_xy = {{0.0, 0.0}};
  topo.ue_xy = {{0.0, 0.0}};
  topo.serving_aps = {{0}};
  topo.served_ues = {{0}};
  ChannelSet cs;
  cs.L = 1;
  cs.K = 1;
  cs.N = 4;
  cs.antenna.assign(1, cvec(4, cplx(0, 0)));
  cs.beamspace.assign(1, cvec(4, cplx(0, 0)));
  cs.paths.resize(1);
  cs.beamspace[0] = {cplx(0.1, -0.2), cplx(0, 0), cplx(1, 0), cplx(0.5, 0.25)};

  BeamAssignment assign;
  assign.L = 1;
  assign.N = 4;
  assign.N_RF = 2;
  assign.ap_rows = {{{0, 2}, {kPaddingUe, 0}}};
  assign.classification = {{UserClass::NIU}};

  const EffectiveChannels eff = effective_channels(cs, assign, topo);
  REQUIRE(eff.at(0, 0).size() == 2);
  // Row 0 carries beam 2 (the unit entry), row 1 the padded beam 0.
  CHECK(eff.at(0, 0)[0] == cplx(1, 0));
  CHECK(eff.at(0, 0)[1] == cplx(0.1, -0.2));

  // Permuting the rows permutes the entries identically.
  assign.ap_rows = {{{kPaddingUe, 0}, {0, 2}}};
  const EffectiveChannels eff2 = effective_channels(cs, assign, topo);
  CHECK(eff2.at(0, 0)[0] == cplx(0.1, -0.2));
  CHECK(eff2.at(0, 0)[1] == cplx(1, 0));

  // Norm identity: selected beam energies sum to the effective-channel norm.
  const double want = std::norm(cs.beamspace[0][2]) + std::norm(cs.beamspace[0][0]);
  CHECK(norm2_sq(eff.at(0, 0)) == Catch::Approx(want).margin(1e-15));
}

TEST_CASE("effective channels from a full drop keep per-pair consistency") {
  const DropFixture f = random_drop(small_cfg(4, 3, 8, 4, 2), 71);
  const BeamAssignment assign = two_stage_assignment(f.cs, f.topo, f.cfg);
  for (int l = 0; l < f.cfg.L; ++l) {
    const auto& rows = assign.ap_rows[static_cast<std::size_t>(l)];
    for (int k = 0; k < f.cfg.K; ++k) {
      const cvec& h = f.eff.at(l, k);
      REQUIRE(h.size() == rows.size());
      double e = 0.0;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        CHECK(h[r] == f.cs.hb(l, k)[static_cast<std::size_t>(rows[r].beam)]);
        e += std::norm(h[r]);
      }
      CHECK(e <= norm2_sq(f.cs.hb(l, k)) + 1e-15);
    }
  }
}

TEST_CASE("matched-filter initialization fills each AP's power budget") {
  SECTION("unit-norm single UE gets sqrt(P_max) times the channel") {
    EffectiveChannels eff = make_eff(1, 1, 3, {{0}});
    eff.hbar[0] = basis(3, 1);
    SystemConfig cfg = small_cfg(1, 1, 3, 3, 1);
    cfg.P_max = 2.25;
    const PrecoderState st = init_precoders(eff, cfg);
    CHECK(st.z_at(0, 0)[1] == cplx(1.5, 0.0));
    CHECK(st.z_at(0, 0)[0] == cplx(0, 0));
    CHECK(st.ap_power[0] == cfg.P_max);
    CHECK(st.mu[0] == cplx(0, 0));
    CHECK(st.alpha[0] == 1.0);
  }
  SECTION("per-AP power equals the budget exactly on random drops") {
    const DropFixture f = random_drop(small_cfg(5, 4, 8, 4, 2), 5);
    const PrecoderState st = init_precoders(f.eff, f.cfg);
    for (int l = 0; l < f.cfg.L; ++l) {
      double p = 0.0;
      for (int k : f.eff.served_ues[static_cast<std::size_t>(l)])
        p += norm2_sq(st.z_at(l, k));
      if (f.eff.served_ues[static_cast<std::size_t>(l)].empty()) {
        CHECK(p == 0.0);
      } else {
        CHECK(p == Catch::Approx(f.cfg.P_max).margin(1e-12));
      }
    }
    // Off-cluster entries stay identically zero.
    for (int l = 0; l < f.cfg.L; ++l)
      for (int k = 0; k < f.cfg.K; ++k)
        if (!std::binary_search(f.eff.serving_aps[static_cast<std::size_t>(k)].begin(),
                                f.eff.serving_aps[static_cast<std::size_t>(k)].end(), l))
          CHECK(norm2_sq(st.z_at(l, k)) == 0.0);
  }
  SECTION("an AP with all-zero effective channels stays silent") {
    EffectiveChannels eff = make_eff(2, 1, 2, {{0}, {0}});
    eff.hbar[eff.idx(0, 0)] = basis(2, 0);
    // AP 1 serves UE 0 with a zero channel.
    SystemConfig cfg = small_cfg(2, 1, 2, 2, 2);
    const PrecoderState st = init_precoders(eff, cfg);
    CHECK(st.ap_power[0] == cfg.P_max);
    CHECK(st.ap_power[1] == 0.0);
    CHECK(norm2_sq(st.z_at(1, 0)) == 0.0);
  }
}

TEST_CASE("receiver coefficient update matches the scalar closed form") {
  EffectiveChannels eff = make_eff(1, 1, 2, {{0}});
  eff.hbar[0] = basis(2, 0);
  SystemConfig cfg = small_cfg(1, 1, 2, 2, 1);
  cfg.noise_dbm = -30.0;  // noise_w = 1e-6
  cfg.validate();
  PrecoderState st = init_precoders(eff, cfg);

  SECTION("zero precoders give zero coefficients") {
    std::fill(st.z.begin(), st.z.end(), cvec(2, cplx(0, 0)));
    update_mu(st, eff, cfg);
    CHECK(st.mu[0] == cplx(0, 0));
    CHECK(st.mu_link[0] == cplx(0, 0));
  }
  SECTION("z = sqrt(P) h gives mu = sqrt(P)/(P + noise)") {
    update_mu(st, eff, cfg);
    const double p = cfg.P_max;
    const double want = std::sqrt(p) / (p + cfg.noise_w);
    CHECK(std::abs(st.mu[0] - cplx(want, 0)) <= 1e-15 * want);
    CHECK(st.mu[0] == st.mu_link[0]);
  }
}

TEST_CASE("per-UE coefficient aggregates its link coefficients") {
  const DropFixture f = random_drop(small_cfg(4, 3, 8, 4, 3), 13);
  PrecoderState st = init_precoders(f.eff, f.cfg);
  std::mt19937_64 rng(99);
  randomize_state(st, f.eff, f.cfg, rng);
  update_mu(st, f.eff, f.cfg);
  for (int k = 0; k < f.cfg.K; ++k) {
    cplx agg(0, 0);
    const RawSums s = raw_sums(st, f.eff, k);
    for (int l : f.eff.serving_aps[static_cast<std::size_t>(k)]) {
      agg += st.mu_link[st.idx(l, k)];
      // Each link coefficient is its own numerator over the shared denominator.
      cplx g(0, 0);
      const cvec& h = f.eff.at(l, k);
      const cvec& z = st.z_at(l, k);
      for (std::size_t r = 0; r < h.size(); ++r) g += std::conj(h[r]) * z[r];
      const cplx want = g / (s.total + f.cfg.noise_w);
      CHECK(std::abs(st.mu_link[st.idx(l, k)] - want) <= 1e-14 * (std::abs(want) + 1.0));
    }
    CHECK(std::abs(st.mu[static_cast<std::size_t>(k)] - agg) <= 1e-14);
  }
}

TEST_CASE("analytic receiver coefficients beat a dense perturbation grid") {
  const DropFixture f = random_drop(small_cfg(4, 3, 8, 4, 2), 21);
  PrecoderState st = init_precoders(f.eff, f.cfg);
  // Two block iterations put the state away from the initialization.
  for (int it = 0; it < 2; ++it) {
    update_mu(st, f.eff, f.cfg);
    update_alpha(st, f.eff, f.cfg);
    update_z(st, f.eff, f.cfg, SolveMode::exact());
  }
  update_mu(st, f.eff, f.cfg);
  const double best = wsmse_objective(st, f.eff, f.cfg);
  for (int k = 0; k < f.cfg.K; ++k) {
    for (int l : f.eff.serving_aps[static_cast<std::size_t>(k)]) {
      const std::size_t id = st.idx(l, k);
      const cplx analytic = st.mu_link[id];
      const double step = (std::abs(analytic) + 1.0) * 1e-3;
      for (int a = -10; a <= 10; ++a) {
        for (int b = -10; b <= 10; ++b) {
          if (a == 0 && b == 0) continue;
          st.mu_link[id] = analytic + cplx(a * step, b * step);
          const double perturbed = wsmse_objective(st, f.eff, f.cfg);
          REQUIRE(perturbed >= best - 1e-12 * std::abs(best));
        }
      }
      st.mu_link[id] = analytic;
    }
  }
}

TEST_CASE("weight update reproduces the closed forms and MSE identities") {
  SECTION("zero precoders give alpha = 1") {
    EffectiveChannels eff = make_eff(1, 2, 2, {{0, 1}});
    SystemConfig cfg = small_cfg(1, 2, 2, 2, 1);
    PrecoderState st = init_precoders(eff, cfg);
    update_alpha(st, eff, cfg);
    CHECK(st.alpha[0] == 1.0);
    CHECK(st.alpha[1] == 1.0);
  }
  SECTION("no interference gives alpha = 1 + SINR") {
    EffectiveChannels eff = make_eff(1, 1, 2, {{0}});
    eff.hbar[0] = basis(2, 0);
    SystemConfig cfg = small_cfg(1, 1, 2, 2, 1);
    PrecoderState st = init_precoders(eff, cfg);
    update_alpha(st, eff, cfg);
    const double sinr = cfg.P_max / cfg.noise_w;
    CHECK(st.alpha[0] == Catch::Approx(1.0 + sinr).epsilon(1e-12));
  }
  SECTION("alpha times the minimized MSE is one on random states") {
    const DropFixture f = random_drop(small_cfg(5, 4, 8, 4, 3), 31);
    PrecoderState st = init_precoders(f.eff, f.cfg);
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 20; ++rep) {
      randomize_state(st, f.eff, f.cfg, rng);
      update_mu(st, f.eff, f.cfg);
      update_alpha(st, f.eff, f.cfg);
      for (int k = 0; k < f.cfg.K; ++k) {
        const RawSums s = raw_sums(st, f.eff, k);
        const double interf = s.total - s.signal;
        // Ratio form of the minimized MSE.
        const double e_ratio = (interf + f.cfg.noise_w) / (s.total + f.cfg.noise_w);
        const double a = st.alpha[static_cast<std::size_t>(k)];
        CHECK(a * e_ratio == Catch::Approx(1.0).margin(1e-10));
        // Expansion form evaluated at the fresh coefficients agrees.
        double e_exp = 1.0;
        for (int l : f.eff.serving_aps[static_cast<std::size_t>(k)]) {
          cplx g(0, 0);
          const cvec& h = f.eff.at(l, k);
          const cvec& z = st.z_at(l, k);
          for (std::size_t r = 0; r < h.size(); ++r) g += std::conj(h[r]) * z[r];
          const cplx m = st.mu_link[st.idx(l, k)];
          e_exp += std::norm(m) * (s.total + f.cfg.noise_w) -
                   2.0 * std::real(std::conj(m) * g);
        }
        CHECK(a * e_exp == Catch::Approx(1.0).margin(1e-10));
        // 1/E - 1 recovers the per-link SINR.
        CHECK(1.0 / e_ratio - 1.0 ==
              Catch::Approx(per_link_sinr(st, f.eff, k, f.cfg)).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("objective equals K minus log-weights at fresh coefficients") {
  const DropFixture f = random_drop(small_cfg(6, 4, 8, 4, 4), 47);
  PrecoderState st = init_precoders(f.eff, f.cfg);
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    randomize_state(st, f.eff, f.cfg, rng);
    update_mu(st, f.eff, f.cfg);
    update_alpha(st, f.eff, f.cfg);
    double want = 0.0;
    for (int k = 0; k < f.cfg.K; ++k)
      want += 1.0 - std::log(st.alpha[static_cast<std::size_t>(k)]);
    CHECK(wsmse_objective(st, f.eff, f.cfg) ==
          Catch::Approx(want).margin(1e-10 * (1.0 + std::abs(want))));
  }
}

TEST_CASE("local gram is the weighted sum of served outer products") {
  SECTION("single served UE with unit weight gives a coordinate projector") {
    EffectiveChannels eff = make_eff(1, 1, 3, {{0}});
    eff.hbar[0] = basis(3, 0);
    SystemConfig cfg = small_cfg(1, 1, 3, 3, 1);
    PrecoderState st = init_precoders(eff, cfg);
    st.alpha[0] = 1.0;
    st.mu_link[0] = cplx(1, 0);
    const cmat H = local_gram(st, eff, 0);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        CHECK(H(i, j) == ((i == 0 && j == 0) ? cplx(1, 0) : cplx(0, 0)));
  }
  SECTION("gram is PSD with rank min(served, N_RF) on random drops") {
    const DropFixture f = random_drop(small_cfg(4, 4, 8, 2, 2), 17);
    PrecoderState st = init_precoders(f.eff, f.cfg);
    update_mu(st, f.eff, f.cfg);
    update_alpha(st, f.eff, f.cfg);
    for (int l = 0; l < f.cfg.L; ++l) {
      const cmat H = local_gram(st, f.eff, l);
      const HermitianEig eig = hermitian_eig(H);
      const double top = std::max(eig.eigenvalues.front(), 0.0);
      CHECK(eig.eigenvalues.back() >= -1e-12 * (top + 1.0));
      const auto served = f.eff.served_ues[static_cast<std::size_t>(l)].size();
      const int want = static_cast<int>(std::min<std::size_t>(
          served, static_cast<std::size_t>(f.cfg.N_RF)));
      CHECK(effective_rank(eig) == want);
    }
  }
}

TEST_CASE("power curve in lambda matches closed forms and a dense oracle") {
  SECTION("rank-one projector gives 1/(1+lambda)^2") {
    cmat H(3, 3);
    add_scaled_outer(H, 1.0, basis(3, 0));
    const HermitianEig eig = hermitian_eig(H);
    const std::vector<cvec> rhs = {basis(3, 0)};
    for (double lam : {0.1, 1.0, 7.0}) {
      const double want = 1.0 / ((1.0 + lam) * (1.0 + lam));
      CHECK(power_given_lambda(eig, rhs, lam) == Catch::Approx(want).epsilon(1e-12));
    }
    CHECK(power_given_lambda(eig, rhs, 1e12) <= 1e-20);
  }
  SECTION("random instance agrees with an independent dense solve") {
    std::mt19937_64 rng(11);
    const std::size_t m = 5;
    cmat A = testutil::random_cmat(m, m, rng);
    cmat H(m, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        cplx s(0, 0);
        for (std::size_t t = 0; t < m; ++t) s += A(i, t) * std::conj(A(j, t));
        H(i, j) = s;
      }
    const HermitianEig eig = hermitian_eig(H);
    std::vector<cvec> rhs;
    for (int j = 0; j < 3; ++j) rhs.push_back(testutil::random_cvec(m, rng));
    const double lam = 0.37;
    double want = 0.0;
    cmat Hs = H;
    for (std::size_t i = 0; i < m; ++i) Hs(i, i) += lam;
    for (const cvec& b : rhs) want += norm2_sq(testutil::dense_solve(Hs, b));
    CHECK(power_given_lambda(eig, rhs, lam) == Catch::Approx(want).epsilon(1e-10));
  }
  SECTION("singular shift with energy in the null space returns infinity") {
    const cmat H(2, 2);
    const HermitianEig eig = hermitian_eig(H);
    const std::vector<cvec> rhs = {basis(2, 0)};
    CHECK(std::isinf(power_given_lambda(eig, rhs, 0.0)));
  }
}

TEST_CASE("lambda bisection solves the power constraint") {
  cmat H(2, 2);
  add_scaled_outer(H, 1.0, basis(2, 0));
  const HermitianEig eig = hermitian_eig(H);
  const std::vector<cvec> rhs = {basis(2, 0)};

  SECTION("quarter-power target lands at lambda = 1") {
    const double lam = bisect_lambda(eig, rhs, 0.25, 1e-10);
    CHECK(lam == Catch::Approx(1.0).margin(1e-8));
    CHECK(power_given_lambda(eig, rhs, lam) ==
          Catch::Approx(0.25).epsilon(1e-9));
  }
  SECTION("slack constraint returns the floor") {
    const double lam = bisect_lambda(eig, rhs, 1e9, 1e-10);
    CHECK(lam == lambda_floor(eig));
    CHECK(power_given_lambda(eig, rhs, lam) <= 1e9);
  }
  SECTION("active constraint meets the stop tolerance on random instances") {
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 25; ++rep) {
      const std::size_t m = 4;
      const cmat Hr = testutil::random_hermitian(m, rng);  // PSD squared below
      cmat Hp(m, m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          cplx s(0, 0);
          for (std::size_t t = 0; t < m; ++t) s += Hr(i, t) * std::conj(Hr(j, t));
          Hp(i, j) = s;
        }
      const HermitianEig e = hermitian_eig(Hp);
      std::vector<cvec> r;
      for (int j = 0; j < 2; ++j) r.push_back(testutil::random_cvec(m, rng));
      const double p_max = 1e-3;  // small enough that the constraint binds
      const double tol = 1e-10;
      const double lam = bisect_lambda(e, r, p_max, tol);
      if (lam > lambda_floor(e)) {
        CHECK(std::abs(power_given_lambda(e, r, lam) - p_max) <= tol * p_max * 1.01);
      } else {
        CHECK(power_given_lambda(e, r, lam) <= p_max);
      }
    }
  }
}

TEST_CASE("per-AP precoder solve") {
  SECTION("single served UE gets a matched-filter direction") {
    std::mt19937_64 rng(41);
    const cvec h = testutil::random_cvec(4, rng);
    const std::vector<cvec> hb = {h};
    const ApZResult res = update_z_ap(hb, {1.3}, {cplx(0.3, 0.1)},
                                      {std::norm(cplx(0.3, 0.1))}, 1.0,
                                      SolveMode::exact());
    const cplx ip = dot(h, res.z[0]);
    CHECK(std::abs(ip) == Catch::Approx(norm2(h) * norm2(res.z[0])).epsilon(1e-10));
    CHECK(res.power <= 1.0 * (1.0 + 1e-9));
  }
  SECTION("zero coefficients give zero precoders") {
    const std::vector<cvec> hb = {basis(3, 0), basis(3, 1)};
    const ApZResult res = update_z_ap(hb, {1.0, 1.0}, {cplx(0, 0), cplx(0, 0)},
                                      {0.0, 0.0}, 1.0, SolveMode::exact());
    CHECK(norm2_sq(res.z[0]) == 0.0);
    CHECK(norm2_sq(res.z[1]) == 0.0);
  }
  SECTION("high-order truncated series matches the exact path") {
    const std::vector<cvec> hb = {basis(3, 0), basis(3, 1, cplx(0.8, 0))};
    const std::vector<double> alpha = {1.0, 1.0};
    const std::vector<cplx> mu = {cplx(1, 0), cplx(1, 0)};
    const std::vector<double> msq = {1.0, 1.0};
    const ApZResult exact = update_z_ap(hb, alpha, mu, msq, 1.0, SolveMode::exact());
    const ApZResult nse = update_z_ap(hb, alpha, mu, msq, 1.0, SolveMode::nse(60));
    REQUIRE(exact.lambda == nse.lambda);
    for (std::size_t j = 0; j < hb.size(); ++j)
      CHECK(testutil::rel_err(nse.z[j], exact.z[j]) <= 1e-6);
  }
  SECTION("truncated-series power never exceeds the budget") {
    const DropFixture f = random_drop(small_cfg(4, 3, 8, 4, 2), 57);
    for (int t : {1, 3, 7}) {
      PrecoderState st = init_precoders(f.eff, f.cfg);
      for (int it = 0; it < 3; ++it) {
        update_mu(st, f.eff, f.cfg);
        update_alpha(st, f.eff, f.cfg);
        update_z(st, f.eff, f.cfg, SolveMode::nse(t));
        for (int l = 0; l < f.cfg.L; ++l) {
          double p = 0.0;
          for (int k : f.eff.served_ues[static_cast<std::size_t>(l)])
            p += norm2_sq(st.z_at(l, k));
          CHECK(p <= f.cfg.P_max * (1.0 + 1e-9));
          CHECK(p == Catch::Approx(st.ap_power[static_cast<std::size_t>(l)])
                         .margin(1e-12));
        }
      }
    }
  }
}

TEST_CASE("z update touches only serving links and only local data") {
  const DropFixture f = random_drop(small_cfg(5, 4, 8, 4, 2), 67);
  PrecoderState st = init_precoders(f.eff, f.cfg);
  update_mu(st, f.eff, f.cfg);
  update_alpha(st, f.eff, f.cfg);

  // Corrupting another AP's channels must not change this AP's solution.
  EffectiveChannels scrambled = f.eff;
  std::mt19937_64 rng(5);
  for (int k = 0; k < f.cfg.K; ++k)
    scrambled.hbar[scrambled.idx(4, k)] =
        testutil::random_cvec(static_cast<std::size_t>(f.cfg.N_RF), rng);

  PrecoderState a = st;
  PrecoderState b = st;
  update_z(a, f.eff, f.cfg, SolveMode::exact());
  update_z(b, scrambled, f.cfg, SolveMode::exact());
  for (int l = 0; l < 4; ++l) {
    for (int k : f.eff.served_ues[static_cast<std::size_t>(l)]) {
      const cvec& za = a.z_at(l, k);
      const cvec& zb = b.z_at(l, k);
      for (std::size_t r = 0; r < za.size(); ++r) REQUIRE(za[r] == zb[r]);
    }
  }
  // Off-cluster entries remain exactly zero after the update.
  for (int l = 0; l < f.cfg.L; ++l)
    for (int k = 0; k < f.cfg.K; ++k)
      if (!std::binary_search(f.eff.serving_aps[static_cast<std::size_t>(k)].begin(),
                              f.eff.serving_aps[static_cast<std::size_t>(k)].end(), l))
        CHECK(norm2_sq(a.z_at(l, k)) == 0.0);
}

TEST_CASE("objective starts at K and descends under block updates") {
  SECTION("initial state value is the UE count") {
    const DropFixture f = random_drop(small_cfg(4, 3, 8, 4, 2), 83);
    const PrecoderState st = init_precoders(f.eff, f.cfg);
    CHECK(wsmse_objective(st, f.eff, f.cfg) == Catch::Approx(3.0).margin(1e-12));
  }
  SECTION("every block step is non-increasing within slack") {
    SystemConfig cfg = small_cfg(8, 4, 16, 4, 4);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const DropFixture f = random_drop(cfg, 400 + seed);
      PrecoderState st = init_precoders(f.eff, f.cfg);
      double obj = wsmse_objective(st, f.eff, f.cfg);
      for (int it = 0; it < 20; ++it) {
        update_mu(st, f.eff, f.cfg);
        const double o1 = wsmse_objective(st, f.eff, f.cfg);
        REQUIRE(o1 <= obj + 1e-8);
        update_alpha(st, f.eff, f.cfg);
        const double o2 = wsmse_objective(st, f.eff, f.cfg);
        REQUIRE(o2 <= o1 + 1e-8);
        update_z(st, f.eff, f.cfg, SolveMode::exact());
        const double o3 = wsmse_objective(st, f.eff, f.cfg);
        REQUIRE(o3 <= o2 + 1e-8);
        obj = o3;
      }
    }
  }
}

TEST_CASE("full loop reaches the single-user closed form") {
  const DropFixture f = random_drop(small_cfg(1, 1, 16, 4, 1), 7);
  SystemConfig cfg = f.cfg;
  cfg.max_iters = 100;
  cfg.conv_tol = 1e-10;
  const PrecoderState st = run_wsmse(f.eff, cfg, SolveMode::exact());
  const double hn = norm2_sq(f.eff.at(0, 0));
  const double want = std::log2(1.0 + cfg.P_max * hn / cfg.noise_w);
  CHECK(st.sum_rate_history.back() == Catch::Approx(want).epsilon(1e-6));
  // Full power, matched-filter direction.
  CHECK(st.ap_power[0] == Catch::Approx(cfg.P_max).epsilon(1e-8));
  const cplx ip = dot(f.eff.at(0, 0), st.z_at(0, 0));
  CHECK(std::abs(ip) ==
        Catch::Approx(std::sqrt(hn) * norm2(st.z_at(0, 0))).epsilon(1e-9));
}

TEST_CASE("loop bookkeeping and stop rule") {
  const DropFixture f = random_drop(small_cfg(6, 4, 8, 4, 2), 29);
  SystemConfig cfg = f.cfg;
  cfg.conv_tol = 1e-4;
  PrecoderState st = run_wsmse(f.eff, cfg, SolveMode::exact());
  REQUIRE(st.iterations >= 1);
  REQUIRE(st.iterations <= cfg.max_iters);
  CHECK(st.objective_history.size() == static_cast<std::size_t>(st.iterations));
  CHECK(st.sum_rate_history.size() == static_cast<std::size_t>(st.iterations));
  CHECK(st.trace.size() == static_cast<std::size_t>(st.iterations));

  // Converged state is a fixed point for the stop metric: one more block
  // iteration moves the sum rate by less than the tolerance.
  if (st.iterations < cfg.max_iters) {
    const double before = per_link_sum_rate(st, f.eff, cfg);
    update_mu(st, f.eff, cfg);
    update_alpha(st, f.eff, cfg);
    update_z(st, f.eff, cfg, SolveMode::exact());
    const double after = per_link_sum_rate(st, f.eff, cfg);
    CHECK(std::abs(after - before) < cfg.conv_tol * std::max(before, 1e-12));
  }

  // Determinism: a second run reproduces the history bit for bit.
  const PrecoderState st2 = run_wsmse(f.eff, cfg, SolveMode::exact());
  REQUIRE(st2.sum_rate_history.size() == st.sum_rate_history.size());
  for (std::size_t i = 0; i < st.sum_rate_history.size(); ++i)
    CHECK(st.sum_rate_history[i] == st2.sum_rate_history[i]);
}

TEST_CASE("flop counters split preparation, search, and application work") {
  const DropFixture f = random_drop(small_cfg(4, 3, 8, 4, 2), 37);
  PrecoderState ex = run_wsmse(f.eff, f.cfg, SolveMode::exact());
  CHECK(ex.flops_prep.total() > 0);
  CHECK(ex.flops_lambda.total() > 0);
  CHECK(ex.flops_apply.total() > 0);
  CHECK(ex.total_flops() ==
        ex.flops_prep.total() + ex.flops_lambda.total() + ex.flops_apply.total());

  // The truncated series costs more application work per extra order.
  SystemConfig cfg = f.cfg;
  cfg.max_iters = 5;
  cfg.conv_tol = 1e-300;
  const PrecoderState n2 = run_wsmse(f.eff, cfg, SolveMode::nse(2));
  const PrecoderState n8 = run_wsmse(f.eff, cfg, SolveMode::nse(8));
  CHECK(n8.flops_apply.total() > n2.flops_apply.total());
  CHECK(n2.flops_prep.total() == n8.flops_prep.total());
}

TEST_CASE("zero-forcing baseline") {
  SECTION("orthonormal channels reduce to matched filters with equal split") {
    EffectiveChannels eff = make_eff(1, 2, 3, {{0, 1}});
    eff.hbar[eff.idx(0, 0)] = basis(3, 0);
    eff.hbar[eff.idx(0, 1)] = basis(3, 1);
    SystemConfig cfg = small_cfg(1, 2, 3, 3, 1);
    cfg.P_max = 2.0;
    const PrecoderState st = zf_baseline(eff, cfg);
    CHECK(std::abs(st.z_at(0, 0)[0]) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(st.z_at(0, 1)[1]) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(norm2_sq(st.z_at(0, 0)) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(st.ap_power[0] == Catch::Approx(2.0).epsilon(1e-12));
  }
  SECTION("zero crosstalk and full power on random drops") {
    const DropFixture f = random_drop(small_cfg(5, 4, 8, 4, 2), 91);
    const PrecoderState st = zf_baseline(f.eff, f.cfg);
    for (int l = 0; l < f.cfg.L; ++l) {
      const auto& served = f.eff.served_ues[static_cast<std::size_t>(l)];
      if (served.empty()) continue;
      double p = 0.0;
      for (int k : served) p += norm2_sq(st.z_at(l, k));
      CHECK(p == Catch::Approx(f.cfg.P_max).margin(1e-10));
      for (int i : served) {
        for (int k : served) {
          if (i == k) continue;
          const double scale = norm2(f.eff.at(l, i)) * norm2(st.z_at(l, k));
          CHECK(std::abs(dot(f.eff.at(l, i), st.z_at(l, k))) <= 1e-8 * scale);
        }
      }
    }
  }
  SECTION("rank-deficient serving set survives via diagonal loading") {
    EffectiveChannels eff = make_eff(1, 2, 3, {{0, 1}});
    eff.hbar[eff.idx(0, 0)] = basis(3, 0);
    eff.hbar[eff.idx(0, 1)] = basis(3, 0);  // identical channel
    SystemConfig cfg = small_cfg(1, 2, 3, 3, 1);
    const PrecoderState st = zf_baseline(eff, cfg);
    CHECK(std::isfinite(norm2(st.z_at(0, 0))));
    CHECK(st.ap_power[0] == Catch::Approx(cfg.P_max).margin(1e-9));
  }
}

TEST_CASE("iteration trace serializes one record per iteration") {
  const DropFixture f = random_drop(small_cfg(4, 3, 8, 4, 2), 53);
  const PrecoderState st = run_wsmse(f.eff, f.cfg, SolveMode::exact());
  const nlohmann::json j = trace_json(st);
  REQUIRE(j.is_array());
  REQUIRE(j.size() == static_cast<std::size_t>(st.iterations));
  CHECK(j[0]["iter"] == 1);
  CHECK(j[j.size() - 1]["iter"] == st.iterations);
  for (const auto& rec : j) {
    CHECK(rec.contains("objective"));
    CHECK(rec.contains("sum_rate"));
    CHECK(rec["lambda"].size() == static_cast<std::size_t>(f.cfg.L));
    CHECK(rec["power"].size() == static_cast<std::size_t>(f.cfg.L));
  }
}
