#include <gtest/gtest.h>

#include <random>
#include <sstream>
#include <thread>

#include "flexiast/config.hpp"
#include "flexiast/resize.hpp"
#include "oracles.hpp"

using namespace flexiast;

namespace {

std::vector<PatchShape> patch_set_shapes() {
    std::vector<PatchShape> out;
    for (int p : default_patch_sizes()) out.push_back(PatchShape::square(p));
    return out;
}

Matrix<double> to_rm(const oracle::Mat& m) { return m; }

}  // namespace

TEST(Bilinear, SinglePixelReplicates) {
    auto op = build_bilinear({1, 1}, {2, 2});
    ASSERT_EQ(op.matrix.rows(), 4);
    ASSERT_EQ(op.matrix.cols(), 1);
    EXPECT_TRUE(op.matrix.isApproxToConstant(1.0));
    EXPECT_EQ(op.kind, ResizeKind::Bilinear);
}

TEST(Bilinear, SameShapeIsIdentity) {
    auto op = build_bilinear({2, 2}, {2, 2});
    EXPECT_TRUE(op.matrix.isIdentity(0.0));
}

TEST(Bilinear, TwoToThreeMiddleColumn) {
    auto op = build_bilinear({2, 2}, {3, 3});
    Vector<double> x(4);
    x << 0, 1, 0, 1;  // [[0,1],[0,1]]
    Vector<double> y = op.matrix * x;
    for (int r = 0; r < 3; ++r) {
        EXPECT_DOUBLE_EQ(y(r * 3 + 0), 0.0);
        EXPECT_DOUBLE_EQ(y(r * 3 + 1), 0.5);
        EXPECT_DOUBLE_EQ(y(r * 3 + 2), 1.0);
    }
    oracle::Mat img(2, 2);
    img << 0, 1, 0, 1;
    const auto ref = oracle::vec(oracle::bilinear_resample(img, 3, 3));
    EXPECT_LT((y - ref).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Bilinear, MatchesCoordinateOracleOnRandomShapes) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> dim(1, 9);
    for (int trial = 0; trial < 60; ++trial) {
        PatchShape s{dim(rng), dim(rng)}, t{dim(rng), dim(rng)};
        auto op = build_bilinear(s, t);
        const auto ref = oracle::bilinear_matrix(s.freq, s.time, t.freq, t.time);
        ASSERT_LT((op.matrix - to_rm(ref)).cwiseAbs().maxCoeff(), 1e-12)
            << s.str() << " -> " << t.str();
    }
}

TEST(Bilinear, RowsSumToOneForAllPatchSetPairs) {
    for (auto s : patch_set_shapes())
        for (auto t : patch_set_shapes()) {
            auto op = build_bilinear(s, t);
            const Vector<double> ones = op.matrix * Vector<double>::Ones(s.area());
            ASSERT_LT((ones.array() - 1.0).abs().maxCoeff(), 1e-6) << s.str() << "->" << t.str();
        }
}

TEST(Bilinear, RejectsZeroDimensions) {
    EXPECT_THROW(build_bilinear({0, 4}, {4, 4}), Error);
    EXPECT_THROW(build_pi_resize({4, 4}, {4, 0}), Error);
}

TEST(PiResize, IdentityForEveryShape) {
    for (auto s : patch_set_shapes()) {
        auto op = build_pi_resize(s, s);
        EXPECT_LT((op.matrix - Matrix<double>::Identity(s.area(), s.area())).cwiseAbs().maxCoeff(),
                  1e-6)
            << s.str();
        EXPECT_EQ(op.kind, ResizeKind::PseudoInverse);
    }
}

TEST(PiResize, UpsamplingPreservesInnerProducts) {
    auto b = build_bilinear({2, 2}, {4, 4});
    auto p = build_pi_resize({2, 2}, {4, 4});
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        const auto x = oracle::random_matrix(4, 1, rng);
        const auto w = oracle::random_matrix(4, 1, rng);
        const double lhs = x.col(0).dot(w.col(0));
        const double rhs = (b.matrix * x).col(0).dot((p.matrix * w).col(0));
        ASSERT_NEAR(lhs, rhs, 1e-4);
    }
}

TEST(PiResize, DownsamplingMatchesNormalEquations) {
    const auto b = oracle::bilinear_matrix(4, 4, 2, 2);
    auto p = build_pi_resize({4, 4}, {2, 2});
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i) {
        const oracle::Vec w = oracle::random_matrix(16, 1, rng).col(0);
        const oracle::Vec ref = oracle::least_squares_normal(b, w);
        const oracle::Vec got = p.matrix * w;
        ASSERT_LT((got - ref).norm() / ref.norm(), 1e-4);
    }
}

// The factorised construction must agree with a pseudoinverse of the whole
// (unfactored) transposed bilinear matrix, including mixed up/down pairs.
TEST(PiResize, FactorisedEqualsFullSvd) {
    const std::pair<PatchShape, PatchShape> pairs[] = {
        {{3, 5}, {6, 2}}, {{4, 4}, {7, 3}}, {{8, 8}, {5, 12}}, {{2, 6}, {2, 9}}, {{6, 6}, {3, 3}}};
    for (auto [s, t] : pairs) {
        const auto b = oracle::bilinear_matrix(s.freq, s.time, t.freq, t.time);
        const auto full = pseudo_inverse(to_rm(b.transpose()));
        const auto op = build_pi_resize(s, t);
        ASSERT_LT((op.matrix - full).cwiseAbs().maxCoeff(), 1e-9) << s.str() << "->" << t.str();
    }
}

TEST(PiResize, SatisfiesMoorePenroseConditions) {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> dim(1, 12);
    for (int trial = 0; trial < 25; ++trial) {
        PatchShape s{dim(rng), dim(rng)}, t{dim(rng), dim(rng)};
        const Matrix<double> a = build_bilinear(s, t).matrix.transpose();
        const Matrix<double> p = build_pi_resize(s, t).matrix;
        ASSERT_LT((a * p * a - a).cwiseAbs().maxCoeff(), 1e-8) << s.str() << "->" << t.str();
        ASSERT_LT((p * a * p - p).cwiseAbs().maxCoeff(), 1e-8);
        ASSERT_LT(((a * p).transpose() - a * p).cwiseAbs().maxCoeff(), 1e-8);
        ASSERT_LT(((p * a).transpose() - p * a).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(PseudoInverse, RejectsNonFiniteInput) {
    Matrix<double> a = Matrix<double>::Identity(3, 3);
    a(1, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(pseudo_inverse(a), Error);
}

TEST(PseudoInverse, TruncatesTinySingularValues) {
    Matrix<double> a = Matrix<double>::Zero(2, 2);
    a(0, 0) = 1.0;
    a(1, 1) = 1e-9;
    const auto p = pseudo_inverse(a);
    EXPECT_NEAR(p(0, 0), 1.0, 1e-12);
    EXPECT_EQ(p(1, 1), 0.0);
}

TEST(AxisRestricted, TimeOnlyShapeAndConstancy) {
    auto op = build_axis_restricted({16, 16}, {16, 32}, AxisMode::TimeOnly);
    EXPECT_EQ(op.matrix.rows(), 512);
    EXPECT_EQ(op.matrix.cols(), 256);
    auto bl = build_bilinear({16, 16}, {16, 32});
    // constant along time, varying along frequency
    Matrix<double> patch(16, 16);
    for (int i = 0; i < 16; ++i) patch.row(i).setConstant(0.25 * i - 1.0);
    const Vector<double> out = bl.matrix * Eigen::Map<const Vector<double>>(patch.data(), 256);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 32; ++j) ASSERT_NEAR(out(i * 32 + j), 0.25 * i - 1.0, 1e-12);
}

TEST(AxisRestricted, TimeOnlySameShapeIsIdentity) {
    auto op = build_axis_restricted({16, 16}, {16, 16}, AxisMode::TimeOnly);
    EXPECT_TRUE(op.matrix.isIdentity(1e-6));
}

TEST(AxisRestricted, FreqOnlyMatchesKroneckerAndFullConstruction) {
    auto op = build_axis_restricted({16, 16}, {8, 16}, AxisMode::FreqOnly);
    // Kronecker oracle: 1-D PI factor along frequency, identity along time.
    const auto b1 = oracle::bilinear_matrix(16, 1, 8, 1);
    const oracle::Mat p1 = b1.transpose().completeOrthogonalDecomposition().pseudoInverse();
    oracle::Mat kron_ref = oracle::Mat::Zero(8 * 16, 16 * 16);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 16; ++j)
            kron_ref.block(i * 16, j * 16, 16, 16) = p1(i, j) * oracle::Mat::Identity(16, 16);
    EXPECT_LT((op.matrix - to_rm(kron_ref)).cwiseAbs().maxCoeff(), 1e-5);
    // and the unfactored 2-D construction
    const auto b = oracle::bilinear_matrix(16, 16, 8, 16);
    const oracle::Mat full = b.transpose().completeOrthogonalDecomposition().pseudoInverse();
    EXPECT_LT((op.matrix - to_rm(full)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(AxisRestricted, RejectsChangingFrozenAxis) {
    EXPECT_THROW(build_axis_restricted({16, 16}, {8, 16}, AxisMode::TimeOnly), Error);
    EXPECT_THROW(build_axis_restricted({16, 16}, {16, 8}, AxisMode::FreqOnly), Error);
    EXPECT_THROW(build_operator({16, 16}, {8, 8}, ResizeKind::Bilinear, AxisMode::TimeOnly), Error);
}

TEST(Apply, IdentityAndZero) {
    auto op = build_pi_resize<float>({4, 4}, {4, 4});
    std::mt19937_64 rng(1);
    Matrix<float> stack = oracle::random_matrix(5, 16, rng).cast<float>();
    EXPECT_LT((op.apply(stack) - stack).cwiseAbs().maxCoeff(), 1e-6f);
    auto up = build_pi_resize<float>({2, 2}, {4, 4});
    EXPECT_TRUE(up.apply(Matrix<float>::Zero(3, 4)).isZero(0.0f));
}

TEST(Apply, AdjointIdentity) {
    std::mt19937_64 rng(9);
    for (auto [s, t] : {std::pair<PatchShape, PatchShape>{{2, 2}, {4, 4}},
                        {{16, 16}, {8, 8}},
                        {{8, 12}, {10, 6}}}) {
        for (auto kind : {ResizeKind::Bilinear, ResizeKind::PseudoInverse}) {
            auto op = build_operator(s, t, kind);
            for (int i = 0; i < 10; ++i) {
                const Matrix<double> v = oracle::random_matrix(1, s.area(), rng);
                const Matrix<double> w = oracle::random_matrix(1, t.area(), rng);
                const double lhs = op.apply(v).row(0).dot(w.row(0));
                const double rhs = v.row(0).dot(op.apply_adjoint(w).row(0));
                ASSERT_NEAR(lhs, rhs, 1e-5 * std::max(1.0, std::abs(lhs)));
            }
        }
    }
}

TEST(Apply, ShapeMismatchThrows) {
    auto op = build_bilinear({2, 2}, {4, 4});
    EXPECT_THROW(op.apply(Matrix<double>::Zero(1, 5)), Error);
    EXPECT_THROW(op.apply_adjoint(Matrix<double>::Zero(1, 4)), Error);
}

TEST(DumpCsv, RoundTripsValues) {
    auto op = build_pi_resize({3, 3}, {5, 4});
    std::ostringstream os;
    dump_csv(op, os);
    std::istringstream is(os.str());
    std::string line;
    int r = 0;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string cell;
        int c = 0;
        while (std::getline(ls, cell, ',')) {
            ASSERT_EQ(std::stod(cell), op.matrix(r, c)) << r << "," << c;
            ++c;
        }
        ASSERT_EQ(c, op.matrix.cols());
        ++r;
    }
    EXPECT_EQ(r, op.matrix.rows());
}

TEST(OperatorCache, SharesInstancesAcrossThreads) {
    OperatorCache<float> cache;
    const auto shapes = patch_set_shapes();
    const std::array<ResizeKind, 2> kinds{ResizeKind::Bilinear, ResizeKind::PseudoInverse};
    std::vector<std::thread> pool;
    std::vector<OperatorCache<float>::Ptr> got(4);
    for (int i = 0; i < 4; ++i)
        pool.emplace_back([&, i] { got[i] = cache.get({16, 16}, {8, 8}, ResizeKind::PseudoInverse); });
    for (auto& t : pool) t.join();
    for (int i = 1; i < 4; ++i) EXPECT_EQ(got[i]->matrix, got[0]->matrix);
    cache.precompute({16, 16}, shapes, kinds);
    EXPECT_EQ(cache.size(), shapes.size() * kinds.size());
    EXPECT_EQ(cache.get({16, 16}, {48, 48}, ResizeKind::Bilinear).get(),
              cache.get({16, 16}, {48, 48}, ResizeKind::Bilinear).get());
}
