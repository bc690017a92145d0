#include "topocat/errors.hpp"
#include "topocat/fockspace.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

using namespace topocat;

TEST_CASE("canonical mode order interleaves chiralities") {
  CHECK(canonical_position({1, Chirality::CW}) == 0);
  CHECK(canonical_position({1, Chirality::CCW}) == 1);
  CHECK(canonical_position({3, Chirality::CCW}) == 5);
  for (int p = 0; p < 10; ++p) CHECK(canonical_position(mode_at(p)) == p);
  CHECK(to_string(ModeId{2, Chirality::CCW}) == "(2,CCW)");
}

TEST_CASE("truncation schemes") {
  const auto t = TruncationScheme::edge_bulk(3, 8, 3);
  CHECK(t.cutoffs() == std::vector<int>{8, 8, 3, 3, 3, 3});
  CHECK(t.cutoff({1, Chirality::CCW}) == 8);
  CHECK(t.cutoff({3, Chirality::CW}) == 3);
  CHECK_THROWS_AS(t.cutoff({4, Chirality::CW}), IndexError);
  CHECK(TruncationScheme::coherent_cutoff(2.0) == 14);
  CHECK(TruncationScheme::coherent_cutoff(0.0) == 1);
  CHECK_THROWS_AS(TruncationScheme({3, 0}), UsageError);
}

TEST_CASE("space dimension and the capacity guard") {
  const auto s = build_space(3, TruncationScheme::edge_bulk(3, 8, 3));
  CHECK(s.dimension() == 8u * 8u * 81u);
  CHECK(s.cavity_count() == 3);
  CHECK_THROWS_AS(build_space(5, TruncationScheme::uniform(5, 10).with_cap(1000)), CapacityError);
}

TEST_CASE("flat index round trip, first mode most significant") {
  const auto s = build_space(2, TruncationScheme({3, 2, 4, 2}));
  CHECK(s.strides() == std::vector<std::size_t>{16, 8, 2, 1});
  for (std::size_t f = 0; f < s.dimension(); ++f) {
    const auto occ = s.occupations(f);
    CHECK(s.flat_index(occ) == f);
    for (std::size_t m = 0; m < s.mode_count(); ++m) CHECK(s.occupation(f, m) == occ[m]);
  }
  const std::vector<int> bad = {3, 0, 0, 0};
  CHECK_THROWS(s.flat_index(bad));
}

TEST_CASE("ladder operators obey the truncated commutator") {
  const auto s = build_space(1, TruncationScheme({5, 3}));
  const ModeId m{1, Chirality::CW};
  const auto a = mode_operator(s, m, OpKind::Annihilate);
  const auto ad = mode_operator(s, m, OpKind::Create);
  const auto n = mode_operator(s, m, OpKind::Number);
  CHECK((ad - a.adjoint()).max_abs() == doctest::Approx(0.0));
  CHECK((ad * a - n).max_abs() < 1e-14);
  // [a, a^dag] = 1 except on the top level, where it is 1 - cutoff.
  const LinOp comm = a * ad - ad * a;
  for (std::size_t f = 0; f < s.dimension(); ++f) {
    const int occ = s.occupation(f, 0);
    CHECK(comm.element(f, f).real() == doctest::Approx(occ == 4 ? -4.0 : 1.0));
  }
  CHECK_THROWS_AS(mode_operator(s, {2, Chirality::CW}, OpKind::Number), IndexError);
}

TEST_CASE("operators on different spaces do not combine") {
  const auto s1 = build_space(1, TruncationScheme({3, 3}));
  const auto s2 = build_space(1, TruncationScheme({4, 3}));
  auto a = LinOp::identity(s1);
  CHECK_THROWS_AS(a += LinOp::identity(s2), DimensionError);
}

TEST_CASE("coherent state statistics") {
  const int cutoff = 40;
  const cplx alpha(1.2, -0.7);
  const CVector c = coherent_amplitudes(alpha, cutoff);
  CHECK(c.squaredNorm() == doctest::Approx(1.0).epsilon(1e-12));
  const auto s = CompositeSpace::single_mode(cutoff);
  const Ket k = coherent_ket(s, ModeId{}, alpha);
  const auto a = mode_operator(s, ModeId{}, OpKind::Annihilate);
  const auto n = mode_operator(s, ModeId{}, OpKind::Number);
  const cplx ma = expect(a, k);
  CHECK(ma.real() == doctest::Approx(alpha.real()).epsilon(1e-10));
  CHECK(ma.imag() == doctest::Approx(alpha.imag()).epsilon(1e-10));
  CHECK(expect(n, k).real() == doctest::Approx(std::norm(alpha)).epsilon(1e-10));
}

TEST_CASE("coherent state on a short cutoff is renormalized and warns") {
  std::vector<std::string> seen;
  set_warning_sink([&](const std::string& w) { seen.push_back(w); });
  const auto s = build_space(1, TruncationScheme({6, 2}));
  const Ket k = coherent_ket(s, {1, Chirality::CW}, 2.0);
  set_warning_sink(nullptr);
  CHECK(k.norm() == doctest::Approx(1.0));
  CHECK(seen.size() == 1);
}

TEST_CASE("partial trace of a product state") {
  const auto s = build_space(2, TruncationScheme({3, 2, 2, 3}));
  const std::vector<int> occ = {2, 1, 0, 1};
  const Ket k = fock_ket(s, occ);
  const ModeId keep_mode{2, Chirality::CCW};
  const DensityOp r = reduced_mode_state(k, keep_mode);
  CHECK(r.dimension() == 3u);
  CHECK(r.matrix(1, 1).real() == doctest::Approx(1.0));
  CHECK(r.purity() == doctest::Approx(1.0));

  const std::vector<ModeId> keep = {{1, Chirality::CW}, {2, Chirality::CCW}};
  const DensityOp pair = partial_trace(DensityOp::from_ket(k), keep);
  CHECK(pair.dimension() == 9u);
  CHECK(pair.trace().real() == doctest::Approx(1.0));
  const std::vector<ModeId> none;
  CHECK_THROWS_AS(partial_trace(k, none), UsageError);
}

TEST_CASE("partial trace of an entangled state is mixed") {
  const auto s = build_space(1, TruncationScheme({2, 2}));
  Ket k{s, CVector::Zero(4)};
  k.amplitudes(s.flat_index(std::vector<int>{1, 0})) = 1.0 / std::numbers::sqrt2;
  k.amplitudes(s.flat_index(std::vector<int>{0, 1})) = 1.0 / std::numbers::sqrt2;
  const DensityOp r = reduced_mode_state(DensityOp::from_ket(k), {1, Chirality::CW});
  CHECK(r.purity() == doctest::Approx(0.5));
  CHECK(r.min_eigenvalue() == doctest::Approx(0.5));
  // Ket and density-matrix paths agree.
  CHECK((reduced_mode_state(k, {1, Chirality::CW}).matrix - r.matrix).norm() < 1e-14);
}
