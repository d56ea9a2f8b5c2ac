#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "snam/additive_model.hpp"
#include "snam/training.hpp"
#include "unit/oracles.hpp"
#include "unit/test_helpers.hpp"

namespace snam {
namespace {

FeatureMatrix uniform_features(std::mt19937_64& rng, Eigen::Index n, Eigen::Index p, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> unit(lo, hi);
  FeatureMatrix x(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = unit(rng);
  return x;
}

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

// Three cubic units on features 0..2, a tensor unit on (0, 3) and a linear unit on 4,
// all with random coefficients and centering frozen on x.
AdditiveModel random_model(std::mt19937_64& rng, const FeatureMatrix& x) {
  AdditiveModel model({"a", "b", "c", "d", "e"}, Family::gaussian);
  for (std::size_t f = 0; f < 3; ++f) {
    model.add_unit(FeatureUnit::cubic(f, testing::random_knots(rng, 4 + rng() % 5), 0.1));
  }
  model.add_unit(FeatureUnit::tensor(0, 3, testing::random_knots(rng, 4), testing::random_knots(rng, 3), 0.1));
  model.add_unit(FeatureUnit::linear(4));
  for (std::size_t u = 0; u < model.units().size(); ++u) {
    model.unit(u).set_beta(testing::random_vector(rng, model.unit(u).dim()));
  }
  model.set_intercept(0.3);
  const auto rows = iota_rows(static_cast<std::size_t>(x.rows()));
  model.freeze_centering(x, rows);
  return model;
}

TEST(UnitForward, LinearUnitSubtractsMean) {
  FeatureMatrix x(3, 1);
  x << 1.0, 2.0, 6.0;
  AdditiveModel model({"v"}, Family::gaussian);
  model.add_unit(FeatureUnit::linear(0));
  model.unit(0).set_beta(Eigen::VectorXd::Constant(1, 1.5));
  model.freeze_centering(x, iota_rows(3));
  const double row[] = {5.0};
  const UnitOutput out = unit_forward(model.unit(0), row);
  EXPECT_NEAR(out.contribution, 1.5 * (5.0 - 3.0), 1e-14);
  EXPECT_NEAR(out.basis_row[0], 2.0, 1e-14);
}

TEST(UnitForward, ZeroCoefficientsGiveZero) {
  const FeatureUnit unit = FeatureUnit::cubic(0, KnotVector({0.0, 0.3, 1.0}));
  for (double v : {-3.0, 0.1, 0.5, 7.0}) {
    const double row[] = {v};
    EXPECT_EQ(unit_forward(unit, row).contribution, 0.0);
  }
}

TEST(UnitForward, FrozenContributionsSumToZero) {
  std::mt19937_64 rng(51);
  const FeatureMatrix x = uniform_features(rng, 500, 5, -0.2, 1.2);
  const AdditiveModel model = random_model(rng, x);
  for (const auto& unit : model.units()) {
    ASSERT_TRUE(unit.frozen());
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) total += unit_forward(unit, row_span(x, static_cast<std::size_t>(i))).contribution;
    EXPECT_NEAR(total, 0.0, 1e-8 * static_cast<double>(x.rows()));
  }
}

TEST(FeatureUnit, FrozenMeansAreImmutable) {
  FeatureUnit unit = FeatureUnit::linear(0);
  unit.freeze();
  EXPECT_THROW(unit.set_means(Eigen::VectorXd::Ones(1)), Error);
}

TEST(FeatureUnit, CoefficientLengthAndLambdaChecked) {
  FeatureUnit unit = FeatureUnit::cubic(0, KnotVector({0.0, 0.5, 1.0}));
  EXPECT_THROW(unit.set_beta(Eigen::VectorXd::Ones(4)), Error);
  EXPECT_THROW(unit.set_lambda(-1.0), Error);
  const FeatureUnit tensor = FeatureUnit::tensor(0, 1, KnotVector({0.0, 0.5, 1.0}), KnotVector({0.0, 0.2, 0.6, 1.0}));
  EXPECT_EQ(tensor.dim(), 12u);
  EXPECT_EQ(tensor.penalty().rows(), 12);
}

TEST(TensorExpand, OneHotOuterProduct) {
  const Eigen::Vector3d e1(0.0, 1.0, 0.0);
  const Eigen::Vector4d e2(0.0, 0.0, 0.0, 1.0);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(12);
  expected[1 * 4 + 3] = 1.0;
  EXPECT_EQ(tensor_expand(e1, e2), expected);
  EXPECT_THROW(tensor_expand(Eigen::VectorXd(), e2), Error);
}

TEST(TensorExpand, PartitionOfUnityProduct) {
  const CubicBasisSystem a(KnotVector({0.0, 0.4, 1.0}));
  const CubicBasisSystem b(KnotVector({-1.0, 0.0, 0.5, 1.0}));
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int s = 0; s < 50; ++s) {
    const Eigen::VectorXd row = tensor_expand(a.eval(unit(rng)), b.eval(2.0 * unit(rng) - 1.0));
    EXPECT_NEAR(row.sum(), 1.0, 1e-12);
  }
}

TEST(TensorPenalty, KroneckerSum) {
  const CubicBasisSystem a(KnotVector({0.0, 0.4, 1.0}));
  const CubicBasisSystem b(KnotVector({-1.0, 0.0, 0.5, 1.0}));
  const Eigen::MatrixXd s = tensor_penalty(a.penalty(), b.penalty());
  const Eigen::Index p = 3;
  const Eigen::Index q = 4;
  for (Eigen::Index l = 0; l < p; ++l)
    for (Eigen::Index r = 0; r < q; ++r)
      for (Eigen::Index l2 = 0; l2 < p; ++l2)
        for (Eigen::Index r2 = 0; r2 < q; ++r2) {
          const double expected = a.penalty()(l, l2) * (r == r2 ? 1.0 : 0.0) + (l == l2 ? 1.0 : 0.0) * b.penalty()(r, r2);
          EXPECT_NEAR(s(l * q + r, l2 * q + r2), expected, 1e-12);
        }
}

TEST(TensorUnit, SeparableTargetRecovered) {
  const KnotVector ki({0.0, 0.3, 0.55, 1.0});
  const KnotVector kj({-1.0, -0.2, 0.4, 1.0});
  std::mt19937_64 rng(57);
  const Eigen::VectorXd u_values = testing::random_vector(rng, 4);
  const Eigen::VectorXd v_values = testing::random_vector(rng, 4);
  const testing::NaturalSplineOracle u(ki.values(), {u_values.data(), u_values.data() + 4});
  const testing::NaturalSplineOracle v(kj.values(), {v_values.data(), v_values.data() + 4});

  const FeatureUnit unit = FeatureUnit::tensor(0, 1, ki, kj);
  const int n = 300;
  Eigen::MatrixXd design(n, 16);
  Eigen::VectorXd target(n);
  std::uniform_real_distribution<double> unit01(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const double xi = unit01(rng);
    const double xj = 2.0 * unit01(rng) - 1.0;
    const double row[] = {xi, xj};
    Eigen::VectorXd raw(16);
    unit.raw_row(row, raw);
    design.row(i) = raw.transpose();
    target[i] = u.value(xi) * v.value(xj);
  }
  const Eigen::VectorXd beta = penalized_least_squares_oracle(design, target, 0.0, Eigen::MatrixXd::Zero(16, 16));
  Eigen::VectorXd expected(16);
  for (Eigen::Index l = 0; l < 4; ++l)
    for (Eigen::Index r = 0; r < 4; ++r) expected[l * 4 + r] = u_values[l] * v_values[r];
  EXPECT_LT((beta - expected).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Predict, InterceptOnlyAndLogistic) {
  AdditiveModel gauss({"a"}, Family::gaussian);
  gauss.set_intercept(2.5);
  const double row[] = {123.0};
  EXPECT_EQ(predict_mu(gauss, row), 2.5);
  EXPECT_EQ(count_params(gauss), 1u);

  AdditiveModel logit({"a"}, Family::bernoulli_logit);
  EXPECT_EQ(predict_mu(logit, row), 0.5);
  EXPECT_NEAR(logistic(-800.0), 0.0, 1e-300);
  EXPECT_EQ(logistic(800.0), 1.0);
}

TEST(Predict, LinearUnitMatchesOrdinaryLeastSquares) {
  std::mt19937_64 rng(59);
  std::normal_distribution<double> noise(0.0, 0.3);
  const Eigen::Index n = 200;
  const FeatureMatrix x = uniform_features(rng, n, 1, -2.0, 3.0);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = 1.7 - 0.8 * x(i, 0) + noise(rng);

  AdditiveModel model({"x"}, Family::gaussian);
  model.add_unit(FeatureUnit::linear(0));
  const auto rows = iota_rows(static_cast<std::size_t>(n));
  model.freeze_centering(x, rows);
  Eigen::MatrixXd design(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = unit_forward(model.unit(0), row_span(x, static_cast<std::size_t>(i))).basis_row[0];
  }
  const Eigen::VectorXd coef = penalized_least_squares_oracle(design, y, 0.0, Eigen::MatrixXd::Zero(2, 2));
  model.set_intercept(coef[0]);
  model.unit(0).set_beta(coef.tail(1));

  // Closed-form simple regression.
  const double mx = x.col(0).mean();
  const double my = y.mean();
  const double sxy = ((x.col(0).array() - mx) * (y.array() - my)).sum();
  const double sxx = (x.col(0).array() - mx).square().sum();
  const double slope = sxy / sxx;
  const double icpt = my - slope * mx;
  for (Eigen::Index i = 0; i < n; ++i) {
    EXPECT_NEAR(predict_eta(model, row_span(x, static_cast<std::size_t>(i))), icpt + slope * x(i, 0), 1e-10);
  }
}

TEST(Predict, AdditivityAndDeterminism) {
  std::mt19937_64 rng(61);
  const FeatureMatrix x = uniform_features(rng, 100, 5);
  for (int trial = 0; trial < 10; ++trial) {
    const AdditiveModel model = random_model(rng, x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const auto row = row_span(x, static_cast<std::size_t>(i));
      double sum = model.intercept();
      for (const auto& unit : model.units()) sum += unit_forward(unit, row).contribution;
      const double eta = predict_eta(model, row);
      EXPECT_NEAR(eta, sum, 1e-12);
      EXPECT_EQ(eta, predict_eta(model, row));
    }
  }
}

TEST(Predict, ConstantShiftIsAbsorbedByIntercept) {
  std::mt19937_64 rng(67);
  const FeatureMatrix x = uniform_features(rng, 80, 5);
  AdditiveModel model = random_model(rng, x);
  std::vector<double> before;
  for (Eigen::Index i = 0; i < x.rows(); ++i) before.push_back(predict_eta(model, row_span(x, static_cast<std::size_t>(i))));

  const double c = 0.73;
  FeatureUnit& unit = model.unit(1);
  const double shift = c * (1.0 - unit.means().sum());
  const double row0[] = {0.0, 0.42, 0.0, 0.0, 0.0};
  const double contribution_before = unit_forward(unit, row0).contribution;
  unit.set_beta(unit.beta().array() + c);
  EXPECT_NEAR(unit_forward(unit, row0).contribution - contribution_before, shift, 1e-12);
  model.set_intercept(model.intercept() - shift);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    EXPECT_NEAR(predict_eta(model, row_span(x, static_cast<std::size_t>(i))), before[static_cast<std::size_t>(i)], 1e-10);
  }
}

TEST(CountParams, Arithmetic) {
  AdditiveModel model({"a", "b", "c"}, Family::gaussian);
  model.add_unit(FeatureUnit::cubic(0, place_knots(KnotPlacement::uniform, std::vector<double>{0.0, 1.0}, 10)));
  EXPECT_EQ(count_params(model), 11u);
  model.add_unit(FeatureUnit::cubic(1, place_knots(KnotPlacement::uniform, std::vector<double>{0.0, 1.0}, 5), 0.0, true));
  EXPECT_EQ(count_params(model), 11u + 5u + 5u);
  model.add_unit(FeatureUnit::silverman(2, SilvermanBasis::from_knots(KnotVector({0.0, 0.5, 1.0}))));
  EXPECT_EQ(count_params(model), 21u + 3u + 6u);
}

TEST(CountParams, HousingLayoutStaysUnderBudget) {
  const std::vector<double> span{0.0, 1.0};
  AdditiveModel model({"MedInc", "HouseAge", "AveRooms", "AveBedrms", "Population", "AveOccup", "Latitude", "Longitude"},
                      Family::gaussian);
  for (std::size_t f = 0; f < 6; ++f) model.add_unit(FeatureUnit::cubic(f, place_knots(KnotPlacement::uniform, span, 20)));
  model.add_unit(FeatureUnit::tensor(6, 7, place_knots(KnotPlacement::uniform, span, 20),
                                     place_knots(KnotPlacement::uniform, span, 20)));
  EXPECT_EQ(count_params(model), 521u);
  EXPECT_LE(count_params(model), 2400u);
}

TEST(AdditiveModel, RejectsBadUnits) {
  AdditiveModel model({"a", "b"}, Family::gaussian);
  EXPECT_THROW(model.add_unit(FeatureUnit::linear(2)), Error);
  model.add_unit(FeatureUnit::linear(0));
  EXPECT_THROW(model.add_unit(FeatureUnit::cubic(0, KnotVector({0.0, 0.5, 1.0}))), Error);
  model.add_unit(FeatureUnit::tensor(0, 1, KnotVector({0.0, 0.5, 1.0}), KnotVector({0.0, 0.5, 1.0})));
  EXPECT_THROW(model.add_unit(FeatureUnit::tensor(1, 0, KnotVector({0.0, 0.5, 1.0}), KnotVector({0.0, 0.5, 1.0}))), Error);
}

TEST(ShapeCurve, ZeroLinearAndCentered) {
  std::mt19937_64 rng(71);
  const FeatureMatrix x = uniform_features(rng, 60, 2);
  AdditiveModel model({"a", "b"}, Family::gaussian);
  model.add_unit(FeatureUnit::cubic(0, KnotVector({0.0, 0.3, 0.6, 1.0})));
  model.add_unit(FeatureUnit::linear(1));
  model.freeze_centering(x, iota_rows(60));

  const std::vector<double> grid{-0.5, 0.0, 0.25, 0.5, 1.0, 1.5};
  for (double v : shape_curve(model, 0, grid)) EXPECT_EQ(v, 0.0);

  model.unit(1).set_beta(Eigen::VectorXd::Constant(1, -2.0));
  const auto line = shape_curve(model, 1, grid);
  for (std::size_t g = 1; g < grid.size(); ++g) {
    EXPECT_NEAR((line[g] - line[g - 1]) / (grid[g] - grid[g - 1]), -2.0, 1e-12);
  }

  model.unit(0).set_beta(testing::random_vector(rng, 4));
  std::vector<double> values;
  for (Eigen::Index i = 0; i < 60; ++i) values.push_back(x(i, 0));
  const auto curve = shape_curve(model, 0, values);
  EXPECT_NEAR(std::accumulate(curve.begin(), curve.end(), 0.0), 0.0, 1e-10);
}

TEST(ShapeSurface, ZeroOnesAndSeparable) {
  const KnotVector ki({0.0, 0.5, 1.0});
  const KnotVector kj({0.0, 0.25, 0.75, 1.0});
  AdditiveModel model({"a", "b", "c"}, Family::gaussian);
  model.add_unit(FeatureUnit::tensor(0, 1, ki, kj));
  model.add_unit(FeatureUnit::cubic(2, ki));
  const std::vector<double> gi{0.1, 0.4, 0.9};
  const std::vector<double> gj{0.05, 0.5, 0.6, 0.95};
  EXPECT_EQ(shape_surface(model, 0, gi, gj), Eigen::MatrixXd::Zero(3, 4));
  EXPECT_THROW(shape_surface(model, 1, gi, gj), Error);
  EXPECT_THROW(shape_curve(model, 0, gi), Error);

  model.unit(0).set_beta(Eigen::VectorXd::Ones(12));
  const Eigen::MatrixXd ones = shape_surface(model, 0, gi, gj);
  EXPECT_LT((ones.array() - ones(0, 0)).abs().maxCoeff(), 1e-12);

  const Eigen::Vector3d a(0.5, -1.0, 2.0);
  const Eigen::Vector4d b(1.0, 0.2, -0.7, 0.4);
  Eigen::VectorXd beta(12);
  for (int l = 0; l < 3; ++l)
    for (int r = 0; r < 4; ++r) beta[l * 4 + r] = a[l] * b[r];
  model.unit(0).set_beta(beta);
  const Eigen::MatrixXd surface = shape_surface(model, 0, gi, gj);
  const CubicBasisSystem si(ki);
  const CubicBasisSystem sj(kj);
  for (std::size_t r = 0; r < gi.size(); ++r)
    for (std::size_t c = 0; c < gj.size(); ++c) {
      const double expected = si.eval(gi[r]).dot(a) * sj.eval(gj[c]).dot(b);
      EXPECT_NEAR(surface(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)), expected, 1e-8);
    }
}

TEST(Centering, UpdateKeepsPredictionsAndFreezes) {
  std::mt19937_64 rng(73);
  const FeatureMatrix x = uniform_features(rng, 50, 5);
  AdditiveModel model = random_model(rng, x);
  model.unfreeze_centering();
  std::vector<std::size_t> half(25);
  std::iota(half.begin(), half.end(), 0);
  std::vector<double> before;
  for (Eigen::Index i = 0; i < x.rows(); ++i) before.push_back(predict_eta(model, row_span(x, static_cast<std::size_t>(i))));
  model.update_centering(x, half);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    EXPECT_NEAR(predict_eta(model, row_span(x, static_cast<std::size_t>(i))), before[static_cast<std::size_t>(i)], 1e-12);
  }
  EXPECT_FALSE(model.unit(0).frozen());
}

TEST(Parameters, RoundTripLayout) {
  AdditiveModel model({"a", "b"}, Family::gaussian);
  model.add_unit(FeatureUnit::cubic(0, KnotVector({0.0, 0.5, 1.0}), 0.0, true));
  model.add_unit(FeatureUnit::silverman(1, SilvermanBasis::from_knots(KnotVector({0.0, 1.0}))));
  ASSERT_EQ(model.num_parameters(), 1u + 3u + 3u + 2u + 4u);
  EXPECT_EQ(model.parameter_offset(1), 7u);
  EXPECT_EQ(model.coefficient_offset(1), 4u);
  Eigen::VectorXd p = model.parameters();
  EXPECT_EQ(p.segment(4, 3), Eigen::Vector3d(0.0, 0.5, 1.0));
  p[0] = 1.0;
  p.segment(1, 3) = Eigen::Vector3d(1.0, 2.0, 3.0);
  p.segment(4, 3) = Eigen::Vector3d(0.6, 0.1, 1.0);  // out of order on purpose
  model.set_parameters(p);
  EXPECT_EQ(model.unit(0).cubic_system()->knots().values(), (std::vector<double>{0.1, 0.6, 1.0}));
  EXPECT_EQ(model.coefficients(), (Eigen::VectorXd(6) << 1.0, 1.0, 2.0, 3.0, 0.0, 0.0).finished());
}

}  // namespace
}  // namespace snam
