#include "testing.hpp"

#include <random>

#include "anomaforge/mask.hpp"
#include "anomaforge/perlin.hpp"
#include "anomaforge/synthesis.hpp"

using namespace anomaforge::synth;

namespace {

// Scalar loop evaluation of the blend.
torch::Tensor blend_loop(const torch::Tensor& I, const torch::Tensor& P, const torch::Tensor& M, double delta) {
  auto out = torch::empty_like(I);
  auto i = I.accessor<double, 3>();
  auto p = P.accessor<double, 3>();
  auto m = M.accessor<std::uint8_t, 2>();
  auto o = out.accessor<double, 3>();
  for (int64_t c = 0; c < I.size(0); ++c)
    for (int64_t y = 0; y < I.size(1); ++y)
      for (int64_t x = 0; x < I.size(2); ++x) {
        const double mv = m[y][x];
        o[c][y][x] = (1.0 - mv) * i[c][y][x] + (1.0 - delta) * mv * i[c][y][x] + delta * mv * p[c][y][x];
      }
  return out;
}

DefectMask from_rows(std::initializer_list<std::initializer_list<int>> rows) {
  std::vector<std::uint8_t> v;
  int h = 0, w = 0;
  for (auto r : rows) {
    w = static_cast<int>(r.size());
    ++h;
    for (int x : r) v.push_back(static_cast<std::uint8_t>(x));
  }
  return DefectMask(torch::from_blob(v.data(), {h, w}, torch::kUInt8).clone());
}

}  // namespace

TEST_CASE("perlin field is deterministic") {
  PerlinConfig cfg{8.0, 3, 0.5, 0.0, 42};
  auto a = perlin_field(64, 48, cfg);
  auto b = perlin_field(64, 48, cfg);
  CHECK(torch::equal(a, b));
  CHECK(a.sizes() == torch::IntArrayRef({64, 48}));
  cfg.seed = 43;
  CHECK_FALSE(torch::equal(a, perlin_field(64, 48, cfg)));
}

TEST_CASE("perlin field vanishes on base lattice points") {
  PerlinConfig cfg{8.0, 1, 0.5, 0.0, 5};
  auto f = perlin_field(64, 64, cfg);
  for (int y = 0; y < 64; y += 8)
    for (int x = 0; x < 64; x += 8) CHECK(f[y][x].item<double>() == 0.0);
  CHECK(f.abs().max().item<double>() > 0.0);
}

TEST_CASE("perlin field stays in [-1, 1]") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> scale(2, 32), octaves(1, 5);
  std::uniform_real_distribution<double> persistence(0.1, 1.0);
  for (int i = 0; i < 100; ++i) {
    PerlinConfig cfg{static_cast<double>(scale(rng)), octaves(rng), persistence(rng), 0.0, rng()};
    auto f = perlin_field(64, 64, cfg);
    CHECK(f.abs().max().item<double>() <= 1.0);
  }
}

TEST_CASE("perlin rejects invalid configs") {
  CHECK_THROWS_AS(perlin_field(32, 32, {1.0, 1, 0.5, 0.0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(perlin_field(32, 32, {8.0, 0, 0.5, 0.0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(perlin_field(32, 32, {8.0, 1, 0.0, 0.0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(perlin_field(4, 32, {8.0, 1, 0.5, 0.0, 0}), std::invalid_argument);
}

TEST_CASE("binarize") {
  auto field = torch::tensor({-0.2, 0.4, 0.6, 0.0}, torch::kFloat64).view({2, 2});
  auto m = binarize(field, 0.3);
  CHECK(torch::equal(m.values(), from_rows({{0, 1}, {1, 0}}).values()));
  auto f = torch::rand({16, 16}, torch::kFloat64);
  CHECK(binarize(f, 2.0).values().sum().item<int64_t>() == 0);
  CHECK(binarize(f, -1.0).values().sum().item<int64_t>() == 256);
  CHECK(binarize(f, 0.5).area_fraction() == doctest::Approx((f > 0.5).to(torch::kFloat64).mean().item<double>()));
}

TEST_CASE("DefectMask validates its entries") {
  CHECK_THROWS_AS(DefectMask(torch::tensor({0, 2}, torch::kInt64).view({1, 2})), std::invalid_argument);
  auto m = from_rows({{1, 0}, {0, 0}});
  CHECK(m.area_fraction() == 0.25);
  CHECK(m.inverted().area_fraction() == 0.75);
  CHECK(DefectMask::zeros(3, 4).area_fraction() == 0.0);
}

TEST_CASE("morph_refine") {
  auto random = binarize(torch::rand({12, 12}, torch::kFloat64), 0.5);
  for (auto op : {MorphOp::erode, MorphOp::dilate, MorphOp::open, MorphOp::close}) {
    CHECK(torch::equal(morph_refine(random, op, 1).values(), random.values()));
  }

  auto dot = DefectMask::zeros(5, 5);
  auto v = dot.values().clone();
  v[2][2] = 1;
  auto dilated = morph_refine(DefectMask(v), MorphOp::dilate, 3);
  CHECK(torch::equal(dilated.values(), from_rows({{0, 0, 0, 0, 0},
                                                  {0, 1, 1, 1, 0},
                                                  {0, 1, 1, 1, 0},
                                                  {0, 1, 1, 1, 0},
                                                  {0, 0, 0, 0, 0}}).values()));

  auto ones = DefectMask(torch::ones({5, 5}, torch::kUInt8));
  CHECK(torch::equal(morph_refine(ones, MorphOp::erode, 3).values(), dilated.values()));

  CHECK_THROWS_AS(morph_refine(ones, MorphOp::erode, 2), std::invalid_argument);
  CHECK_THROWS_AS(morph_refine(ones, MorphOp::erode, 0), std::invalid_argument);
  CHECK(parse_morph_op("close") == MorphOp::close);
  CHECK_THROWS(parse_morph_op("blur"));
}

TEST_CASE("blend_defect special cases") {
  auto I = torch::rand({3, 8, 8}, torch::kFloat64);
  auto P = torch::rand({3, 8, 8}, torch::kFloat64);
  auto M = binarize(torch::rand({8, 8}, torch::kFloat64), 0.5);
  CHECK(torch::equal(blend_defect(I, P, DefectMask::zeros(8, 8), 0.7), I));
  CHECK(torch::equal(blend_defect(I, P, M, 0.0), I));

  auto one = DefectMask(torch::ones({1, 1}, torch::kUInt8));
  auto a = blend_defect(torch::full({1, 1, 1}, 0.2, torch::kFloat64), torch::full({1, 1, 1}, 0.8, torch::kFloat64), one, 0.5);
  CHECK(a.item<double>() == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS(blend_defect(I, P, M, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(blend_defect(I, P.slice(1, 0, 4), M, 0.5), std::invalid_argument);
}

TEST_CASE("blend_defect matches the scalar loop") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    torch::manual_seed(trial);
    auto I = torch::rand({3, 10, 12}, torch::kFloat64);
    auto P = torch::rand({3, 10, 12}, torch::kFloat64);
    auto M = binarize(torch::rand({10, 12}, torch::kFloat64), u(rng));
    const double delta = u(rng);
    auto A = blend_defect(I, P, M, delta);
    CHECK((A - blend_loop(I, P, M.values(), delta)).abs().max().item<double>() < 1e-12);
    auto m = M.values().to(torch::kBool).unsqueeze(0).expand_as(I);
    CHECK(torch::equal(A.masked_select(~m), I.masked_select(~m)));
    auto lo = torch::minimum(I, P), hi = torch::maximum(I, P);
    CHECK(((A >= lo - 1e-15) & (A <= hi + 1e-15)).all().item<bool>());
  }
}

TEST_CASE("sample_defect_mask respects the area rule") {
  SynthConfig cfg;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto s = sample_defect_mask(64, 64, cfg, seed);
    const double area = s.mask.area_fraction();
    CHECK(area > 0.0);
    CHECK(area <= cfg.max_area);
    CHECK(s.quantile >= cfg.quantile_min);
    CHECK(s.quantile <= cfg.quantile_max);
    const int g = static_cast<int>(s.perlin.grid_scale);
    CHECK((g == 8 || g == 16 || g == 32));
    auto again = sample_defect_mask(64, 64, cfg, seed);
    CHECK(torch::equal(s.mask.values(), again.mask.values()));
  }
  cfg.morph_op = MorphOp::open;
  auto s = sample_defect_mask(64, 64, cfg, 1);
  CHECK(s.mask.area_fraction() > 0.0);
}

TEST_CASE("sample_opacity stays in range") {
  SynthConfig cfg;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const double d = sample_opacity(cfg, seed);
    CHECK(d >= cfg.delta_min);
    CHECK(d <= cfg.delta_max);
  }
  cfg.delta_min = 0.9;
  cfg.delta_max = 0.1;
  CHECK_THROWS(sample_opacity(cfg, 0));
}

TEST_CASE("mix_seed separates streams") {
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
  CHECK(mix_seed(7, 3) == mix_seed(7, 3));
}
