#include "doctest.h"

#include <cmath>

#include "mgr/kernels.hpp"
#include "oracle.hpp"

using namespace mgr;

namespace {

GridHierarchy uniform_hier(const Shape &shape) {
  std::vector<std::vector<double>> coords;
  for (std::size_t e : shape)
    coords.push_back(uniform_coords(e));
  return build_hierarchy(shape, coords);
}

GridHierarchy random_hier(const Shape &shape, unsigned seed) {
  std::vector<std::vector<double>> coords;
  for (std::size_t d = 0; d < shape.size(); ++d)
    coords.push_back(oracle::random_increasing_coords(shape[d], seed + d));
  return build_hierarchy(shape, coords);
}

double max_abs(const std::vector<double> &v) {
  double m = 0;
  for (double x : v)
    m = std::max(m, std::abs(x));
  return m;
}

} // namespace

TEST_CASE("quadratic data yields -1 coefficients on the 5-node grid") {
  // y = x^2 - 5x + 6 sampled at x = 0..4
  std::vector<double> coords = {0, 1, 2, 3, 4};
  std::vector<double> v = {6, 2, 0, 0, 2};
  const auto hier = build_hierarchy(Shape{5}, {coords});
  compute_coefficients<double>(v, hier, 2);
  CHECK(v[1] == -1.0);
  CHECK(v[3] == -1.0);
  CHECK(v[0] == 6.0); // kept nodes untouched
  CHECK(v[2] == 0.0);
  CHECK(v[4] == 2.0);
}

TEST_CASE("quadratic signature: coefficients equal -h^2 on uniform grids") {
  for (std::size_t n : {5u, 9u, 17u, 33u}) {
    for (double spacing : {1.0, 0.25, 3.0}) {
      std::vector<double> coords(n), v(n);
      for (std::size_t i = 0; i < n; ++i) {
        coords[i] = spacing * double(i);
        v[i] = coords[i] * coords[i];
      }
      const auto hier = build_hierarchy(Shape{n}, {coords});
      compute_coefficients<double>(v, hier, hier.levels);
      const double expect = -spacing * spacing;
      for (std::size_t i = 1; i + 1 < n; i += 2)
        CHECK(std::abs(v[i] - expect) <= 1e-12 * std::abs(expect));
    }
  }
}

TEST_CASE("multilinear fields have near-zero coefficients on any spacing") {
  // linear in the coordinates, not the indices
  for (unsigned seed : {1u, 2u}) {
    const Shape shape{9, 7};
    const auto hier = random_hier(shape, seed);
    std::vector<double> v(num_elements(shape));
    std::vector<std::vector<double>> coords = {
        oracle::random_increasing_coords(shape[0], seed),
        oracle::random_increasing_coords(shape[1], seed + 1)};
    for (std::size_t j = 0; j < shape[1]; ++j)
      for (std::size_t i = 0; i < shape[0]; ++i)
        v[i + shape[0] * j] = 1.75 * coords[0][i] - 0.5 * coords[1][j] + 3.0;
    const auto h = build_hierarchy(shape, coords);
    auto work = v;
    compute_coefficients<double>(work, h, h.levels);
    const auto part = node_partition(h, h.levels);
    for (std::size_t lin : part.coefficient)
      CHECK(std::abs(work[lin]) <= 1e-13);
  }
}

TEST_CASE("interpolation exactness sweep over small extents") {
  // every per-dimension-linear field interpolates exactly, shapes 3..17
  for (std::size_t n = 3; n <= 17; ++n) {
    for (bool nonuniform : {false, true}) {
      const auto coords = nonuniform
                              ? oracle::random_increasing_coords(n, unsigned(n))
                              : uniform_coords(n);
      const auto hier = build_hierarchy(Shape{n}, {coords});
      std::vector<double> v(n);
      for (std::size_t i = 0; i < n; ++i)
        v[i] = -2.0 * coords[i] + 0.75;
      for (std::size_t l = hier.levels; l >= 1; --l) {
        std::vector<double> level_vals;
        for (std::size_t idx : hier.dims[0].idx[l])
          level_vals.push_back(v[idx]);
        compute_coefficients<double>(level_vals, hier, l);
        for (std::size_t p = 0; p < level_vals.size(); ++p)
          if (!is_coarse_pos(p, level_vals.size()))
            CHECK(std::abs(level_vals[p]) <= 1e-13);
      }
    }
  }
  // one 3-D spot check with mixed small extents
  const Shape shape{3, 17, 5};
  std::vector<std::vector<double>> coords;
  for (std::size_t d = 0; d < 3; ++d)
    coords.push_back(oracle::random_increasing_coords(shape[d], 50 + d));
  const auto hier = build_hierarchy(shape, coords);
  std::vector<double> v(num_elements(shape));
  std::size_t at = 0;
  for (std::size_t k = 0; k < shape[2]; ++k)
    for (std::size_t j = 0; j < shape[1]; ++j)
      for (std::size_t i = 0; i < shape[0]; ++i)
        v[at++] = coords[0][i] - 2.0 * coords[1][j] + 0.5 * coords[2][k];
  compute_coefficients<double>(v, hier, hier.levels);
  for (std::size_t lin : node_partition(hier, hier.levels).coefficient)
    CHECK(std::abs(v[lin]) <= 1e-13);
}

TEST_CASE("constant fields have exactly zero coefficients") {
  // a + t*(b - a) keeps constants exact even on nonuniform spacings
  const auto hier = random_hier(Shape{9, 6}, 33);
  std::vector<double> v(num_elements(Shape{9, 6}), 0.8125);
  auto work = v;
  compute_coefficients<double>(work, hier, hier.levels);
  const auto part = node_partition(hier, hier.levels);
  for (std::size_t lin : part.coefficient)
    CHECK(work[lin] == 0.0);
}

TEST_CASE("coefficients match the dense interpolation oracle") {
  for (Shape shape : {Shape{5, 5}, Shape{9, 6}, Shape{5, 4, 7}}) {
    const auto hier = random_hier(shape, 42);
    for (std::size_t l = hier.levels; l >= 1; --l) {
      const auto v = oracle::random_vector(hier.num_nodes(l), 42 + l);
      auto work = v;
      compute_coefficients<double>(work, hier, l);
      const auto interp = oracle::dense_interpolate(hier, l, v);
      const auto lshape = hier.level_shape(l);
      const auto lstr = make_strides(lshape);
      std::vector<std::size_t> pos(shape.size(), 0);
      for (std::size_t k = 0; k < v.size(); ++k) {
        bool coarse = true;
        for (std::size_t d = 0; d < shape.size(); ++d)
          if (!is_coarse_pos(pos[d], lshape[d]))
            coarse = false;
        const double expect = coarse ? v[k] : v[k] - interp[k];
        CHECK(std::abs(work[k] - expect) <= 1e-13);
        for (std::size_t d = 0; d < shape.size(); ++d) {
          if (++pos[d] < lshape[d])
            break;
          pos[d] = 0;
        }
      }
    }
  }
}

TEST_CASE("restore inverts compute bit-exactly for same-binade data") {
  const Shape shape{17, 17, 17};
  const auto hier = uniform_hier(shape);
  const auto v = oracle::random_vector(num_elements(shape), 5, 1.0, 2.0);
  auto work = v;
  compute_coefficients<double>(work, hier, hier.levels);
  restore_coefficients<double>(work, hier, hier.levels);
  CHECK(work == v);
}

TEST_CASE("restore with zero coefficients is pure upsampling") {
  const Shape shape{9, 9};
  const auto hier = random_hier(shape, 9);
  auto v = oracle::random_vector(num_elements(shape), 10);
  // zero out the coefficient slots, keep the kept-node values
  const auto lshape = hier.level_shape(hier.levels);
  auto zeroed = v;
  const auto part = node_partition(hier, hier.levels);
  for (std::size_t lin : part.coefficient)
    zeroed[lin] = 0.0;
  auto work = zeroed;
  restore_coefficients<double>(work, hier, hier.levels);
  const auto interp = oracle::dense_interpolate(hier, hier.levels, v);
  for (std::size_t lin : part.coefficient)
    CHECK(work[lin] == doctest::Approx(interp[lin]).epsilon(1e-13));
  (void)lshape;
}

TEST_CASE("restore reproduces the quadratic example from its pieces") {
  std::vector<double> coords = {0, 1, 2, 3, 4};
  const auto hier = build_hierarchy(Shape{5}, {coords});
  std::vector<double> mixed = {6, -1, 0, -1, 2}; // kept values + coefficients
  restore_coefficients<double>(mixed, hier, 2);
  CHECK(mixed == std::vector<double>{6, 2, 0, 0, 2});
}

TEST_CASE("tiling never changes kernel results") {
  const Shape shape{33, 33, 33};
  const auto hier = uniform_hier(shape);
  const auto v = oracle::random_vector(num_elements(shape), 77);
  std::vector<std::vector<double>> results;
  for (TileConfig cfg : {TileConfig{2, 2, 2}, TileConfig{16, 4, 4},
                         TileConfig{128, 2, 2}}) {
    auto work = v;
    compute_coefficients<double>(work, hier, hier.levels, cfg);
    results.push_back(std::move(work));
  }
  CHECK(results[0] == results[1]);
  CHECK(results[0] == results[2]);
}

TEST_CASE("tile configurations clamp to the workspace budget") {
  const TileConfig big{1024, 1024, 1024};
  const TileConfig clamped = clamp_to_budget(big, 4096);
  CHECK(clamped.volume() <= 4096);
  CHECK(clamped.bx >= 1);
  CHECK(clamped.by >= 1);
  CHECK(clamped.bz >= 1);
}

TEST_CASE("mass-trans matches the dense R*M oracle on a 3-node example") {
  const auto hier = build_hierarchy(Shape{3}, {{0.0, 1.0, 2.0}});
  NdBuffer<double> in(Shape{3});
  const double c = 0.7;
  in.data = {0.0, c, 0.0};
  const auto out = masstrans_apply(in, hier, 1, 0);
  REQUIRE(out.shape == Shape{2});
  // dense route
  const auto m = oracle::dense_mass({1.0, 1.0});
  const auto r = oracle::dense_transfer(hier, 1, 0);
  const auto f = oracle::matvec(oracle::matmul(r, m), in.data);
  CHECK(out.data[0] == doctest::Approx(f[0]).epsilon(1e-13));
  CHECK(out.data[1] == doctest::Approx(f[1]).epsilon(1e-13));
  // and the hand value: M*vec = {c, 4c, c}, rows add half the middle
  CHECK(out.data[0] == doctest::Approx(3 * c).epsilon(1e-13));
  CHECK(out.data[1] == doctest::Approx(3 * c).epsilon(1e-13));
}

TEST_CASE("mass-trans of zeros is zero and the operator is linear") {
  const auto hier = uniform_hier(Shape{9});
  NdBuffer<double> zero(Shape{9});
  const auto z = masstrans_apply(zero, hier, hier.levels, 0);
  CHECK(max_abs(z.data) == 0.0);

  NdBuffer<double> x(Shape{9}), y(Shape{9}), mix(Shape{9});
  x.data = oracle::random_vector(9, 21);
  y.data = oracle::random_vector(9, 22);
  const double a = 1.7, b = -0.3;
  for (int i = 0; i < 9; ++i)
    mix.data[i] = a * x.data[i] + b * y.data[i];
  const auto fx = masstrans_apply(x, hier, hier.levels, 0);
  const auto fy = masstrans_apply(y, hier, hier.levels, 0);
  const auto fm = masstrans_apply(mix, hier, hier.levels, 0);
  for (std::size_t i = 0; i < fm.data.size(); ++i)
    CHECK(fm.data[i] ==
          doctest::Approx(a * fx.data[i] + b * fy.data[i]).epsilon(1e-12));
}

TEST_CASE("mass-trans equals the dense oracle on random fibers") {
  int cases = 0;
  for (unsigned seed = 0; seed < 50; ++seed) {
    const std::size_t n = 3 + seed % 63;
    const bool nonuniform = seed % 2 == 1;
    const auto hier =
        nonuniform
            ? build_hierarchy(Shape{n},
                              {oracle::random_increasing_coords(n, seed)})
            : uniform_hier(Shape{n});
    NdBuffer<double> in(Shape{n});
    in.data = oracle::random_vector(n, 1000 + seed, -1.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) // vec(C) form: kept nodes hold zero
      if (is_coarse_pos(i, n))
        in.data[i] = 0.0;
    const auto out = masstrans_apply(in, hier, hier.levels, 0);
    const auto m = oracle::dense_mass(
        oracle::level_spacings(hier, hier.levels, 0));
    const auto r = oracle::dense_transfer(hier, hier.levels, 0);
    const auto f = oracle::matvec(oracle::matmul(r, m), in.data);
    REQUIRE(out.data.size() == f.size());
    const double scale = std::max(1.0, max_abs(f));
    for (std::size_t i = 0; i < f.size(); ++i)
      CHECK(std::abs(out.data[i] - f[i]) <= 1e-12 * scale);
    ++cases;
  }
  CHECK(cases == 50);
}

TEST_CASE("fused copy extracts the coefficient class and rejects dim != 0") {
  const auto hier = uniform_hier(Shape{5, 5});
  NdBuffer<double> in(Shape{5, 5});
  in.data = oracle::random_vector(25, 3);
  // zero the kept nodes to satisfy the vec(C) form
  const auto part = node_partition(hier, 2);
  for (std::size_t lin : part.coarse)
    in.data[lin] = 0.0;
  std::vector<double> coefs;
  const auto out = masstrans_apply(in, hier, 2, 0, true, &coefs);
  CHECK(out.shape == Shape{3, 5});
  CHECK(coefs.size() == 16);
  // every nonzero input value must appear in the extracted class
  std::vector<double> expected;
  for (std::size_t lin : part.coefficient)
    expected.push_back(in.data[lin]);
  std::sort(expected.begin(), expected.end());
  auto got = coefs;
  std::sort(got.begin(), got.end());
  CHECK(got == expected);

  CHECK_THROWS_AS(masstrans_apply(in, hier, 2, 1, true), InvalidFusion);
}

TEST_CASE("mass-trans validates input extents") {
  const auto hier = uniform_hier(Shape{9, 9});
  NdBuffer<double> in(Shape{9, 8});
  CHECK_THROWS_AS(masstrans_apply(in, hier, hier.levels, 0), ShapeError);
}

TEST_CASE("thomas factors reproduce the mass matrix") {
  // multiply the LU factors back together and compare densely
  for (std::size_t n : {3u, 9u, 33u, 65u}) {
    const auto hier =
        build_hierarchy(Shape{n}, {oracle::random_increasing_coords(n, n)});
    const auto op = TridiagonalOperator<double>::build(hier, hier.levels, 0);
    const auto h = oracle::level_spacings(hier, hier.levels, 0);
    const auto m = oracle::dense_mass(h);
    // L: unit lower bidiagonal with multipliers -fwd[i]; U: pivots + h super
    oracle::Mat prod(n, oracle::Vec(n, 0.0));
    oracle::Vec pivot(n);
    for (std::size_t i = 0; i < n; ++i)
      pivot[i] = 1.0 / op.inv_pivot[i];
    for (std::size_t i = 0; i < n; ++i) {
      prod[i][i] = pivot[i];
      if (i + 1 < n)
        prod[i][i + 1] = h[i];
      if (i > 0) {
        const double mult = -op.fwd[i];
        prod[i][i - 1] += mult * pivot[i - 1];
        prod[i][i] += mult * h[i - 1];
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        CHECK(std::abs(prod[i][j] - m[i][j]) <=
              1e-13 * std::max(1.0, std::abs(m[i][j])));
  }
}

TEST_CASE("correction solve matches dense elimination") {
  SUBCASE("3-node uniform system") {
    const auto hier = build_hierarchy(Shape{5}, {{0, 1, 2, 3, 4}});
    // solve at level 1: the coarse lattice has 3 nodes with spacing 2
    NdBuffer<double> f(Shape{3});
    f.data = {6, 12, 6};
    auto expect = oracle::dense_solve(
        oracle::dense_mass(oracle::level_spacings(hier, 1, 0)), f.data);
    solve_correction(f, hier, 2, 0);
    for (int i = 0; i < 3; ++i)
      CHECK(f.data[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
  SUBCASE("row sums solve to all ones") {
    const auto hier = uniform_hier(Shape{9});
    const auto h = oracle::level_spacings(hier, hier.levels - 1, 0);
    const auto m = oracle::dense_mass(h);
    NdBuffer<double> f(Shape{5});
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j)
        f.data[i] += m[i][j];
    solve_correction(f, hier, hier.levels, 0);
    for (int i = 0; i < 5; ++i)
      CHECK(f.data[i] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("random systems including nonuniform spacings") {
    for (unsigned seed = 0; seed < 50; ++seed) {
      const std::size_t n = 3 + seed % 63;
      const auto hier =
          seed % 2 ? build_hierarchy(
                         Shape{2 * n - 1},
                         {oracle::random_increasing_coords(2 * n - 1, seed)})
                   : uniform_hier(Shape{2 * n - 1});
      NdBuffer<double> f(Shape{n});
      f.data = oracle::random_vector(n, 300 + seed, -2.0, 2.0);
      const auto rhs = f.data;
      solve_correction(f, hier, hier.levels, 0);
      const auto m = oracle::dense_mass(
          oracle::level_spacings(hier, hier.levels - 1, 0));
      const auto expect = oracle::dense_solve(m, rhs);
      const double scale = std::max(1.0, max_abs(expect));
      for (std::size_t i = 0; i < n; ++i)
        CHECK(std::abs(f.data[i] - expect[i]) <= 1e-12 * scale);
    }
  }
}

TEST_CASE("batched solve treats fibers independently") {
  const auto hier = uniform_hier(Shape{9, 9});
  NdBuffer<double> f(Shape{5, 5});
  f.data = oracle::random_vector(25, 11);
  auto batched = f;
  solve_correction(batched, hier, hier.levels, 0);
  for (int row = 0; row < 5; ++row) {
    const auto hier1 = uniform_hier(Shape{9});
    NdBuffer<double> fiber(Shape{5});
    for (int i = 0; i < 5; ++i)
      fiber.data[i] = f.data[i + 5 * row];
    solve_correction(fiber, hier1, hier1.levels, 0);
    for (int i = 0; i < 5; ++i)
      CHECK(batched.data[i + 5 * row] == fiber.data[i]); // bit-for-bit
  }
}

TEST_CASE("apply_correction adds and removes exactly") {
  // values in [1, 1.5) with corrections on a coarse dyadic lattice: the sum
  // stays representable, so add followed by subtract restores every bit
  std::vector<double> v = oracle::random_vector(10, 1, 1.0, 1.5);
  const auto orig = v;
  std::vector<double> z(10);
  std::mt19937 rng(2);
  for (auto &x : z)
    x = double(int(rng() % 4096) - 2048) / double(1 << 30);
  apply_correction<double>(v, z, +1);
  apply_correction<double>(v, z, -1);
  CHECK(v == orig);
  std::vector<double> zero(10, 0.0);
  auto w = orig;
  apply_correction<double>(w, zero, +1);
  CHECK(w == orig);
  std::vector<double> bad(9, 0.0);
  CHECK_THROWS_AS(apply_correction<double>(w, bad, +1), ShapeError);
}

TEST_CASE("projection identity: corrections are the coarse projection") {
  // residual of <vec(C) - P z, P w> in the fine mass inner product must
  // vanish for every coarse w
  for (unsigned seed = 0; seed < 12; ++seed) {
    const std::size_t n = 5 + 2 * (seed % 7); // 5..17
    const auto hier =
        seed % 2 ? build_hierarchy(Shape{n},
                                   {oracle::random_increasing_coords(n, seed)})
                 : uniform_hier(Shape{n});
    const std::size_t l = hier.levels;
    const std::size_t m = hier.extent(0, l - 1);

    const auto u = oracle::random_vector(n, 700 + seed);
    auto mixed = u;
    compute_coefficients<double>(mixed, hier, l);
    // vec(C): coefficients at odd interior slots, zero at kept slots
    oracle::Vec vec_c(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      if (!is_coarse_pos(i, n))
        vec_c[i] = mixed[i];

    NdBuffer<double> in(Shape{n});
    in.data.assign(vec_c.begin(), vec_c.end());
    auto f = masstrans_apply(in, hier, l, 0);
    solve_correction(f, hier, l, 0);
    const oracle::Vec z(f.data.begin(), f.data.end());

    const auto p = oracle::dense_prolongation(hier, l, 0);
    const auto mf =
        oracle::dense_mass(oracle::level_spacings(hier, l, 0));
    const auto pz = oracle::matvec(p, z);
    oracle::Vec diff(n);
    for (std::size_t i = 0; i < n; ++i)
      diff[i] = vec_c[i] - pz[i];
    const auto mdiff = oracle::matvec(mf, diff);
    // residual against every coarse basis vector
    const auto pt = oracle::transpose(p);
    const auto resid = oracle::matvec(pt, mdiff);
    for (std::size_t i = 0; i < m; ++i)
      CHECK(std::abs(resid[i]) <= 1e-10);
  }
}

TEST_CASE("singular systems cannot arise from valid spacings") {
  const auto hier = uniform_hier(Shape{9});
  CHECK_NOTHROW(TridiagonalOperator<double>::build(hier, 0, 0));
}
