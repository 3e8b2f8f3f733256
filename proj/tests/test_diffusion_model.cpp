#include <random>

#include <catch2/catch_amalgamated.hpp>

#include <neuroflow/diffusion_model.hpp>

using namespace neuroflow;
using Catch::Approx;

namespace {

GraphTopology pair_graph() { return GraphTopology({{0, 0}, {1, 0}}, {{0, 1}}); }

GraphTopology triangle() { return GraphTopology({{0, 0}, {1, 0}, {0, 1}}, {{0, 1}, {1, 2}, {0, 2}}); }

// Dense transition matrix M_k - B W_k B^T built from an explicit incidence.
Matrix dense_transition(const DiffusionModel& m, const GraphTopology& g, index_t k)
{
    Matrix b = Matrix::Zero(g.node_count(), g.edge_count());
    for (index_t e = 0; e < g.edge_count(); ++e) {
        b(g.edge(e).tail, e) = -1.0;
        b(g.edge(e).head, e) = 1.0;
    }
    Matrix w = Matrix::Zero(g.edge_count(), g.edge_count());
    w.diagonal() = m.weights(k);
    Matrix mm = Matrix::Zero(g.node_count(), g.node_count());
    mm.diagonal() = m.memory(k);
    return mm - b * w * b.transpose();
}

DiffusionModel random_model(const GraphTopology& g, index_t order, unsigned seed, double scale = 0.1)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    DiffusionModel m = DiffusionModel::zeros(g.node_count(), g.edge_count(), order);
    for (index_t k = 1; k <= order; ++k) {
        for (auto& v : m.memory(k))
            v = scale * u(rng);
        for (auto& v : m.weights(k))
            v = scale * u(rng);
    }
    return m;
}

Vector random_vector(index_t n, std::mt19937& rng)
{
    std::normal_distribution<double> nd;
    Vector v(n);
    for (auto& x : v)
        x = nd(rng);
    return v;
}

} // namespace

TEST_CASE("identity memory with zero weights reproduces the last sample")
{
    const auto g = triangle();
    DiffusionModel m = DiffusionModel::zeros(3, 3, 1);
    m.memory(1).setOnes();
    const HistoryWindow h({Eigen::Vector3d(1.5, -2, 7)});
    CHECK(predict_one_step(m, g, h) == Eigen::Vector3d(1.5, -2, 7));
    CHECK(compute_flow(m, g, h).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-node diffusion example")
{
    const auto g = pair_graph();
    DiffusionModel m = DiffusionModel::zeros(2, 1, 1);
    m.memory(1).setOnes();
    m.weights(1)[0] = 0.5;
    const HistoryWindow h({Eigen::Vector2d(1, 0)});
    const Vector s = predict_one_step(m, g, h);
    CHECK(s[0] == 0.5);
    CHECK(s[1] == 0.5);
    const Vector f = compute_flow(m, g, h);
    CHECK(f[0] == -0.5);
}

TEST_CASE("K = 2 prediction matches the dense transition matrices")
{
    const auto g = triangle();
    const auto m = random_model(g, 2, 5);
    std::mt19937 rng(1);
    const Vector s1 = random_vector(3, rng), s2 = random_vector(3, rng);
    const Vector expect = dense_transition(m, g, 1) * s1 + dense_transition(m, g, 2) * s2;
    CHECK((predict_one_step(m, g, HistoryWindow({s1, s2})) - expect).norm() < 1e-14);
}

TEST_CASE("history window lags are most recent first")
{
    Series s(4, 2);
    s << 0, 0, 1, 10, 2, 20, 3, 30;
    const auto h = HistoryWindow::from_series(s, 3, 2);
    CHECK(h.lag(1) == Eigen::Vector2d(2, 20));
    CHECK(h.lag(2) == Eigen::Vector2d(1, 10));
    CHECK_THROWS_AS(HistoryWindow::from_series(s, 1, 2), Error);

    const auto g = pair_graph();
    const auto m = random_model(g, 2, 8);
    CHECK((predict_at(m, g, s, 3) - predict_one_step(m, g, h)).norm() == 0.0);
}

TEST_CASE("dimension checks")
{
    const auto g = triangle();
    const auto m = random_model(g, 2, 1);
    CHECK_THROWS_AS(predict_one_step(m, g, HistoryWindow({Vector::Zero(3)})), Error);
    CHECK_THROWS_AS(predict_one_step(m, g, HistoryWindow({Vector::Zero(3), Vector::Zero(2)})), Error);
    CHECK_THROWS_AS(predict_one_step(m, pair_graph(), HistoryWindow({Vector::Zero(2), Vector::Zero(2)})), Error);
    CHECK_THROWS_AS(DiffusionModel(Matrix::Zero(3, 2), Matrix::Zero(3, 1)), Error);
}

TEST_CASE("flow series")
{
    const auto g = pair_graph();
    DiffusionModel m = DiffusionModel::zeros(2, 1, 1);
    m.memory(1).setOnes();
    m.weights(1)[0] = 0.25;

    std::vector<Series> segs(1, Series::Zero(5, 2));
    CHECK(flow_series(m, g, segs, {}).empty());

    segs[0](2, 0) = 4.0; // impulse at node 0
    const std::vector<TimeIndex> at{{0, 3}};
    const auto fs = flow_series(m, g, segs, at);
    REQUIRE(fs.size() == 1);
    CHECK(fs[0].index == TimeIndex{0, 3});
    // physical transport -f runs tail (0) -> head (1), away from the impulse
    CHECK(-fs[0].flow[0] == 1.0);

    const std::vector<TimeIndex> bad{{0, 0}};
    CHECK_THROWS_AS(flow_series(m, g, segs, bad), Error);
    const std::vector<TimeIndex> bad_seg{{1, 3}};
    CHECK_THROWS_AS(flow_series(m, g, segs, bad_seg), Error);
}

TEST_CASE("simulation")
{
    const auto g = triangle();
    const auto m = random_model(g, 2, 3);

    SECTION("zero state and input stay zero")
    {
        const Series out = simulate(m, g, Series::Zero(2, 3), Series(), 20, 0.0, 1);
        CHECK(out.cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("noise is reproducible from the seed")
    {
        const Series a = simulate(m, g, Series::Zero(2, 3), Series(), 50, 1.0, 42);
        const Series b = simulate(m, g, Series::Zero(2, 3), Series(), 50, 1.0, 42);
        const Series c = simulate(m, g, Series::Zero(2, 3), Series(), 50, 1.0, 43);
        CHECK(a == b);
        CHECK(a != c);
    }
    SECTION("noiseless run equals powers of the companion matrix")
    {
        std::mt19937 rng(9);
        Series init(2, 3);
        init.row(0) = random_vector(3, rng).transpose(); // s[-2]
        init.row(1) = random_vector(3, rng).transpose(); // s[-1]
        const Series out = simulate(m, g, init, Series(), 10, 0.0, 0);
        const Matrix a1 = dense_transition(m, g, 1), a2 = dense_transition(m, g, 2);
        Matrix c = Matrix::Zero(6, 6);
        c.topLeftCorner(3, 3) = a1;
        c.topRightCorner(3, 3) = a2;
        c.bottomLeftCorner(3, 3).setIdentity();
        CHECK((c - companion_matrix(m, g)).norm() < 1e-15);
        Vector state(6);
        state << init.row(1).transpose(), init.row(0).transpose();
        for (index_t i = 0; i < 10; ++i) {
            state = c * state;
            CHECK((out.row(i).transpose() - state.head(3)).norm() < 1e-12);
        }
    }
    SECTION("inputs add to the step")
    {
        Series in = Series::Zero(3, 3);
        in(0, 1) = 2.0;
        DiffusionModel z = DiffusionModel::zeros(3, 3, 2);
        const Series out = simulate(z, g, Series::Zero(2, 3), in, 3, 0.0, 0);
        CHECK(out(0, 1) == 2.0);
        CHECK(out.bottomRows(2).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("unstable models are reported")
    {
        DiffusionModel big = DiffusionModel::zeros(3, 3, 1);
        big.memory(1).setConstant(1e200);
        Series init = Series::Ones(1, 3);
        CHECK_THROWS_MATCHES(simulate(big, g, init, Series(), 10, 0.0, 0), Error,
                             Catch::Matchers::Predicate<Error>([](const Error& e) { return e.kind() == "instability"; }));
    }
}

TEST_CASE("stability radius")
{
    const auto g = triangle();
    CHECK(stability_radius(DiffusionModel::zeros(3, 3, 3), g) == 0.0);

    DiffusionModel m = DiffusionModel::zeros(3, 3, 1);
    m.memory(1).setConstant(-0.7);
    CHECK(stability_radius(m, g) == Approx(0.7).margin(1e-12));

    // nonnegative companion: Perron root from power iteration
    DiffusionModel p = DiffusionModel::zeros(3, 3, 2);
    p.memory(1) << 0.3, 0.2, 0.25;
    p.memory(2) << 0.1, 0.15, 0.05;
    const Matrix c = companion_matrix(p, g);
    REQUIRE(c.minCoeff() >= 0.0);
    Vector v = Vector::Ones(6);
    double rho = 0.0;
    for (int i = 0; i < 2000; ++i) {
        const Vector w = c * v;
        rho = w.norm() / v.norm();
        v = w / w.norm();
    }
    CHECK(stability_radius(p, g) == Approx(rho).epsilon(1e-9));
}

TEST_CASE("prediction is linear in the history")
{
    const auto g = triangle();
    const auto m = random_model(g, 3, 17);
    std::mt19937 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Vector> a, b, mix;
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        const double alpha = u(rng), beta = u(rng);
        for (int k = 0; k < 3; ++k) {
            a.push_back(random_vector(3, rng));
            b.push_back(random_vector(3, rng));
            mix.push_back(alpha * a.back() + beta * b.back());
        }
        const Vector lhs = predict_one_step(m, g, HistoryWindow(mix));
        const Vector rhs = alpha * predict_one_step(m, g, HistoryWindow(a)) + beta * predict_one_step(m, g, HistoryWindow(b));
        CHECK((lhs - rhs).norm() < 1e-12 * (1.0 + rhs.norm()));
    }
}

TEST_CASE("reversing an edge flips its flow and leaves the prediction unchanged")
{
    const std::vector<Point2> loc{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    const std::vector<Edge> fwd{{0, 1}, {1, 2}, {0, 2}, {2, 3}};
    const std::vector<Edge> rev{{0, 1}, {2, 1}, {0, 2}, {3, 2}};
    const GraphTopology a(loc, fwd, EdgeOrientation::as_given);
    const GraphTopology b(loc, rev, EdgeOrientation::as_given);
    const auto m = random_model(a, 2, 4);
    std::mt19937 rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const HistoryWindow h({random_vector(4, rng), random_vector(4, rng)});
        CHECK((predict_one_step(m, a, h) - predict_one_step(m, b, h)).norm() < 1e-14);
        const Vector fa = compute_flow(m, a, h), fb = compute_flow(m, b, h);
        CHECK(fa[0] == fb[0]);
        CHECK(fa[1] == -fb[1]);
        CHECK(fa[2] == fb[2]);
        CHECK(fa[3] == -fb[3]);
    }
}

TEST_CASE("prediction is node memory minus divergence of the flow")
{
    const auto g = triangle();
    const auto m = random_model(g, 2, 21);
    std::mt19937 rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const HistoryWindow h({random_vector(3, rng), random_vector(3, rng)});
        Vector expect = m.memory(1).cwiseProduct(h.lag(1)) + m.memory(2).cwiseProduct(h.lag(2));
        expect -= divergence(g, compute_flow(m, g, h));
        CHECK((predict_one_step(m, g, h) - expect).norm() < 1e-14);
    }
}
