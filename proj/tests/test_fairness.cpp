#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fade/fairness.hpp"
#include "fade/math.hpp"
#include "fade/rng.hpp"

using namespace fade;

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// d=1 model whose "scores" are just the item embedding values.
ModelParams scalar_model(std::vector<double> item_values, int num_users) {
  ModelParams p;
  p.num_users = num_users;
  p.num_items = static_cast<int>(item_values.size());
  p.dim = 1;
  p.user_emb.assign(static_cast<std::size_t>(num_users), 1.0);
  p.item_emb = std::move(item_values);
  return p;
}

}  // namespace

TEST_CASE("symmetric groups give zero disparity") {
  // both users score the same candidates identically
  auto p = scalar_model({2.0, 0.5, 0.1}, 2);
  FairnessBatch batch;
  batch.entries.push_back({0, 0, {0, 1, 2}});
  batch.entries.push_back({1, 1, {0, 1, 2}});
  const auto result = dpd(p, batch, 1.0);
  REQUIRE(result.has_value());
  CHECK(result->value == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("constructed DH means 0.9 and 0.6 give DPD 0.3") {
  // Two-candidate sets at tau=1: DH(C;1) = sigmoid(s_pos - s_neg), so margins
  // log(9) and log(1.5) plant group means 0.9 and 0.6.
  auto p = scalar_model({std::log(9.0), 0.0, std::log(1.5), 0.0}, 2);
  FairnessBatch batch;
  batch.entries.push_back({0, 0, {0, 1}});
  batch.entries.push_back({1, 1, {2, 3}});
  const auto result = dpd(p, batch, 1.0);
  REQUIRE(result.has_value());
  CHECK(result->value == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("a missing group signals group-absent") {
  auto p = scalar_model({1.0, 0.0}, 2);
  FairnessBatch batch;
  batch.entries.push_back({0, 0, {0, 1}});
  batch.entries.push_back({1, 0, {0, 1}});
  CHECK_FALSE(dpd(p, batch, 1.0).has_value());
  FairnessBatch empty;
  CHECK_FALSE(dpd(p, empty, 1.0).has_value());
}

TEST_CASE("dpd is invariant to relabeling users within a group") {
  Rng rng(4);
  auto p = init_params(rng, 4, 6, 3, 0.5);
  // users 0 and 1 share an embedding, both in group 0
  for (int j = 0; j < 3; ++j) p.user_emb[3 + static_cast<std::size_t>(j)] = p.user_emb[static_cast<std::size_t>(j)];
  FairnessBatch a, b;
  a.entries.push_back({0, 0, {1, 2, 3}});
  a.entries.push_back({2, 1, {0, 4, 5}});
  b.entries.push_back({1, 0, {1, 2, 3}});  // same candidates, relabeled owner
  b.entries.push_back({2, 1, {0, 4, 5}});
  CHECK(dpd(p, a, 2.0)->value == doctest::Approx(dpd(p, b, 2.0)->value).epsilon(1e-15));
}

TEST_CASE("dpd gradient matches finite differences on a 2-user instance") {
  Rng rng(123);
  const double h = 1e-4;
  for (int trial = 0; trial < 20; ++trial) {
    auto p = init_params(rng, 2, 6, 4, 0.5);
    FairnessBatch batch;
    batch.entries.push_back({0, 0, {0, 1, 2}});
    batch.entries.push_back({1, 1, {3, 4, 5}});
    const auto result = dpd(p, batch, 2.0);
    REQUIRE(result.has_value());

    auto value_at = [&](ModelParams& m) {
      GradientSet scratch(2, 6, 4);
      double v = 0.0;
      REQUIRE(dpd(m, batch, 2.0, v, scratch));
      return v;
    };
    auto check_coord = [&](double* w, double analytic) {
      const double keep = *w;
      *w = keep + h;
      const double up = value_at(p);
      *w = keep - h;
      const double down = value_at(p);
      *w = keep;
      CHECK(rel_err(analytic, (up - down) / (2.0 * h)) <= 1e-4);
    };
    for (UserId u : result->grad.touched_users()) {
      const double* g = result->grad.user_row_if_touched(u);
      for (int j = 0; j < 4; ++j) check_coord(p.user_row(u) + j, g[j]);
    }
    for (ItemId i : result->grad.touched_items()) {
      const double* g = result->grad.item_row_if_touched(i);
      for (int j = 0; j < 4; ++j) check_coord(p.item_row(i) + j, g[j]);
    }
  }
}

TEST_CASE("fade fairness loss values") {
  CHECK(fairness_loss_fade(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(fairness_loss_fade(-10.0) == doctest::Approx(4.5398899e-5).epsilon(1e-4));
  CHECK(fairness_loss_fade_grad(0.0) == doctest::Approx(0.5).epsilon(1e-12));
  // derivative equals sigmoid everywhere
  for (double x : {-3.0, -0.7, 0.2, 5.0}) {
    const double h = 1e-6;
    const double fd = (fairness_loss_fade(x + h) - fairness_loss_fade(x - h)) / (2.0 * h);
    CHECK(fairness_loss_fade_grad(x) == doctest::Approx(fd).epsilon(1e-6));
    CHECK(fairness_loss_fade_grad(x) == doctest::Approx(sigmoid(x)).epsilon(1e-12));
  }
}

TEST_CASE("abs fairness loss is even and floored at ln 2") {
  CHECK(fairness_loss_abs(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(fairness_loss_abs(0.5) == doctest::Approx(fairness_loss_abs(-0.5)).epsilon(1e-15));
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform_double(-5.0, 5.0);
    CHECK(fairness_loss_abs(x) >= std::log(2.0));
  }
  CHECK(fairness_loss_abs_grad(0.0) == 0.0);  // subgradient choice at the kink
  CHECK(fairness_loss_abs_grad(1.0) == doctest::Approx(sigmoid(1.0)));
  CHECK(fairness_loss_abs_grad(-1.0) == doctest::Approx(-sigmoid(1.0)));
}

TEST_CASE("lambda_star worked cases") {
  const std::vector<double> gd = {1.0, 0.0, 2.0};
  CHECK(lambda_star(std::vector<double>{0.0, 3.0, 0.0}, gd) == doctest::Approx(0.0));
  std::vector<double> anti = {-1.0, 0.0, -2.0};
  CHECK(lambda_star(anti, gd) == doctest::Approx(2.0).epsilon(1e-12));
  // scaling grad_dpd by c > 0 scales lambda* by 1/c
  const std::vector<double> rec = {0.3, -1.2, 0.4};
  std::vector<double> scaled = gd;
  for (double& v : scaled) v *= 4.0;
  CHECK(lambda_star(rec, scaled) == doctest::Approx(lambda_star(rec, gd) / 4.0).epsilon(1e-12));
  CHECK_THROWS_AS(lambda_star(rec, std::vector<double>{0.0, 0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("directional derivative basics") {
  const std::vector<double> gd = {1.0, 1.0};
  const std::vector<double> orth = {1.0, -1.0};
  CHECK(directional_dpd_derivative(orth, gd, 0.0, gd) == doctest::Approx(0.0));
}

TEST_CASE("adaptive fairness property on random instances") {
  Rng rng(31337);
  int negative_dpd_cases = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + rng.uniform_int(10);
    std::vector<double> gd(static_cast<std::size_t>(n)), rec(static_cast<std::size_t>(n));
    double norm2 = 0.0;
    for (auto& v : gd) {
      v = rng.uniform_double(-1.0, 1.0);
      norm2 += v * v;
    }
    if (norm2 < 1e-12) continue;
    // force <rec, gd> <= 0 by removing any positive component along gd
    for (auto& v : rec) v = rng.uniform_double(-1.0, 1.0);
    double dot = 0.0;
    for (std::size_t j = 0; j < gd.size(); ++j) dot += rec[j] * gd[j];
    const double push = (std::max(dot, 0.0) + rng.uniform_double() * norm2) / norm2;
    for (std::size_t j = 0; j < gd.size(); ++j) rec[j] -= push * gd[j];

    const double dpd_value = rng.uniform_double(-1.0, 1.0);
    std::vector<double> fair = gd;
    for (double& v : fair) v *= sigmoid(dpd_value);  // grad of the fade loss

    const double lam = lambda_star(rec, gd);
    CHECK(lam >= -1e-12);
    const double deriv = directional_dpd_derivative(rec, fair, lam, gd);
    const double sign = dpd_value > 0 ? 1.0 : (dpd_value < 0 ? -1.0 : 0.0);
    CHECK(sign * deriv <= 1e-12);
    if (dpd_value < 0) {
      CHECK(deriv >= -1e-12);  // disparity pushed back toward zero
      ++negative_dpd_cases;
    }
  }
  CHECK(negative_dpd_cases > 100);  // both signs actually exercised
}

TEST_CASE("gradient-set overloads match the flat-vector formulas") {
  Rng rng(66);
  auto p = init_params(rng, 3, 8, 4, 0.4);
  FairnessBatch batch;
  batch.entries.push_back({0, 0, {0, 1, 2}});
  batch.entries.push_back({1, 1, {3, 4, 5}});
  batch.entries.push_back({2, 0, {6, 7, 0}});
  const auto result = dpd(p, batch, 2.0);
  REQUIRE(result.has_value());

  GradientSet grad_rec(3, 8, 4);
  std::vector<BprSample> bpr = {{0, 1, {2, 3}}, {1, 4, {5}}, {2, 6, {7, 0}}};
  bpr_loss_and_grad(p, bpr, grad_rec);

  // flatten over the union of rows to cross-check the structured overloads
  auto flatten = [&](const GradientSet& g) {
    std::vector<double> flat;
    for (UserId u = 0; u < 3; ++u) {
      const double* row = g.user_row_if_touched(u);
      for (int j = 0; j < 4; ++j) flat.push_back(row ? row[j] : 0.0);
    }
    for (ItemId i = 0; i < 8; ++i) {
      const double* row = g.item_row_if_touched(i);
      for (int j = 0; j < 4; ++j) flat.push_back(row ? row[j] : 0.0);
    }
    return flat;
  };
  const auto rec_flat = flatten(grad_rec);
  const auto dpd_flat = flatten(result->grad);
  CHECK(lambda_star(grad_rec, result->grad) ==
        doctest::Approx(lambda_star(rec_flat, dpd_flat)).epsilon(1e-12));

  GradientSet scaled(3, 8, 4);  // sigma(DPD) * grad DPD, structured
  scaled.add_scaled(result->grad, fairness_loss_fade_grad(result->value));
  std::vector<double> fair_flat = dpd_flat;
  for (double& v : fair_flat) v *= fairness_loss_fade_grad(result->value);
  const double lam = lambda_star(grad_rec, result->grad);
  CHECK(directional_dpd_derivative(grad_rec, scaled, lam, result->grad) ==
        doctest::Approx(directional_dpd_derivative(rec_flat, fair_flat, lam, dpd_flat)).epsilon(1e-12));
}

TEST_CASE("fade loss gradient through the model equals sigmoid(DPD) times the DPD gradient") {
  Rng rng(55);
  auto p = init_params(rng, 2, 8, 3, 0.4);
  FairnessBatch batch;
  batch.entries.push_back({0, 0, {0, 1, 2, 3}});
  batch.entries.push_back({1, 1, {4, 5, 6, 7}});
  const auto result = dpd(p, batch, 1.5);
  REQUIRE(result.has_value());
  const double slope = fairness_loss_fade_grad(result->value);

  // finite differences of softplus(DPD(params)) against the chained analytic gradient
  const double h = 1e-4;
  auto loss_at = [&](ModelParams& m) {
    GradientSet scratch(2, 8, 3);
    double v = 0.0;
    REQUIRE(dpd(m, batch, 1.5, v, scratch));
    return fairness_loss_fade(v);
  };
  for (UserId u : result->grad.touched_users()) {
    const double* g = result->grad.user_row_if_touched(u);
    for (int j = 0; j < 3; ++j) {
      double* w = p.user_row(u) + j;
      const double keep = *w;
      *w = keep + h;
      const double up = loss_at(p);
      *w = keep - h;
      const double down = loss_at(p);
      *w = keep;
      CHECK(rel_err(slope * g[j], (up - down) / (2.0 * h)) <= 1e-4);
    }
  }
}
