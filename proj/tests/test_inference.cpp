#include "testing.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "anomaforge/inference.hpp"
#include "anomaforge/losses.hpp"

using namespace anomaforge;
using namespace anomaforge::infer;

namespace {

torch::Tensor unit_features(std::vector<int64_t> shape, std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  shape.insert(shape.begin(), 1);
  return net::normalize_channels({{torch::randn(shape, gen, torch::kFloat64)}, false}).levels[0][0];
}

torch::Tensor map_loop(const torch::Tensor& t, const torch::Tensor& s) {
  auto out = torch::empty({t.size(1), t.size(2)}, torch::kFloat64);
  auto ta = t.accessor<double, 3>();
  auto sa = s.accessor<double, 3>();
  auto o = out.accessor<double, 2>();
  for (int64_t y = 0; y < t.size(1); ++y)
    for (int64_t x = 0; x < t.size(2); ++x) {
      double dot = 0.0;
      for (int64_t c = 0; c < t.size(0); ++c) dot += ta[c][y][x] * sa[c][y][x];
      o[y][x] = 1.0 - dot;
    }
  return out;
}

double sorted_mean(const torch::Tensor& map, int k) {
  auto flat = map.to(torch::kFloat64).contiguous().flatten();
  std::vector<double> v(flat.data_ptr<double>(), flat.data_ptr<double>() + flat.numel());
  std::sort(v.begin(), v.end(), std::greater<>());
  const auto kk = std::min<std::size_t>(k, v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < kk; ++i) sum += v[i];
  return sum / static_cast<double>(kk);
}

net::DetectorConfig small_config(bool seg_head = true) {
  net::DetectorConfig c;
  c.image_size = 32;
  c.embed_dim = 32;
  c.depth = 2;
  c.taps = {1, 2};
  c.seg_channels = 8;
  c.use_seg_head = seg_head;
  return c;
}

}  // namespace

TEST_CASE("layer_anomaly_map special cases") {
  auto t = unit_features({8, 4, 4}, 1);
  CHECK(torch::equal(layer_anomaly_map(t, t).abs() < 1e-15, torch::ones({4, 4}, torch::kBool)));
  auto s = t.clone();
  s.index_put_({torch::indexing::Slice(), 1, 2}, -t.index({torch::indexing::Slice(), 1, 2}));
  auto m = layer_anomaly_map(t, s);
  CHECK(m[1][2].item<double>() == doctest::Approx(2.0).epsilon(1e-14));
  m[1][2] = 0.0;
  CHECK(m.abs().max().item<double>() < 1e-14);
  CHECK_THROWS_AS(layer_anomaly_map(t * 2.0, t), std::invalid_argument);
  CHECK_THROWS_AS(layer_anomaly_map(t, t.slice(1, 0, 2)), std::invalid_argument);
}

TEST_CASE("layer_anomaly_map matches the scalar loop and averages to the cosine loss") {
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto t = unit_features({6, 5, 7}, 2 * i);
    auto s = unit_features({6, 5, 7}, 2 * i + 1);
    auto m = layer_anomaly_map(t, s);
    CHECK((m - map_loop(t, s)).abs().max().item<double>() < 1e-10);
    CHECK(std::abs(m.mean().item<double>() - train::cosine_loss(t, s).item<double>()) < 1e-10);
  }
}

TEST_CASE("scaled K") {
  CHECK(scaled_top_k(256 * 256) == 100);
  CHECK(scaled_top_k(64 * 64) == 6);
  CHECK(scaled_top_k(4) == 1);
}

TEST_CASE("image_score examples") {
  CHECK(image_score(torch::full({64, 64}, 0.7, torch::kFloat64), 100) == doctest::Approx(0.7).epsilon(1e-14));
  auto m = torch::zeros({32, 32}, torch::kFloat64);
  m.view(-1).slice(0, 0, 100).fill_(1.0);
  CHECK(image_score(m, 100) == 1.0);
  auto four = torch::tensor({0.9, 0.8, 0.1, 0.05}, torch::kFloat64);
  CHECK(image_score(four, 2) == doctest::Approx(0.85).epsilon(1e-15));
  CHECK(image_score(four, 10) == doctest::Approx(0.4625).epsilon(1e-15));
  CHECK_THROWS_AS(image_score(four, 0), std::invalid_argument);
  CHECK_THROWS_AS(image_score(torch::empty({0}), 1), std::invalid_argument);
}

TEST_CASE("image_score equals the full-sort oracle exactly") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> kdist(1, 300);
  for (int i = 0; i < 100; ++i) {
    torch::manual_seed(i);
    auto map = torch::rand({16, 16}, torch::kFloat64);
    const int k = kdist(rng);
    CHECK(image_score(map, k) == sorted_mean(map, k));
  }
}

TEST_CASE("score_pixels bounds, size and determinism") {
  for (bool seg : {true, false}) {
    net::DetectorModel model(small_config(seg));
    auto img = torch::rand({3, 32, 32});
    auto a = score_pixels(model, img);
    auto b = score_pixels(model, img);
    CHECK(a.sizes() == torch::IntArrayRef({32, 32}));
    CHECK(torch::equal(a, b));
    CHECK(a.min().item<double>() >= 0.0);
    CHECK(a.max().item<double>() <= 1.0);
    auto batch = score_pixels(model, torch::stack({img, img}));
    CHECK(batch.sizes() == torch::IntArrayRef({2, 32, 32}));
    CHECK(torch::allclose(batch[0], a, 1e-5, 1e-6));
  }
}

TEST_CASE("analyze output contract") {
  net::DetectorModel model(small_config(false));
  auto img = torch::rand({3, 32, 32});
  auto r = analyze(model, img, 6);
  CHECK(r.k_used == 6);
  CHECK(r.layer_maps.size() == 2);
  for (const auto& m : r.layer_maps) {
    CHECK(m.sizes() == torch::IntArrayRef({32, 32}));
    CHECK(m.min().item<double>() >= -1e-6);
    CHECK(m.max().item<double>() <= 2.0 + 1e-6);
  }
  CHECK(r.image_score >= 0.0);
  CHECK(r.image_score <= 1.0);
  CHECK(r.image_score <= r.pixel_map.max().item<double>());
  auto mean = (r.layer_maps[0] + r.layer_maps[1]) / 4.0;
  CHECK(torch::allclose(r.pixel_map, mean.clamp(0.0, 1.0), 1e-5, 1e-6));
  CHECK_THROWS(analyze(model, img.unsqueeze(0), 6));
}
