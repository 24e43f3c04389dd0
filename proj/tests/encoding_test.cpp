#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tkgr/optim.hpp"
#include "tkgr/time_encoding.hpp"

#include <cmath>
#include <random>

using namespace tkgr;
using tkgr::num::Tensor;

TEST_CASE("zero frequencies and phases give constant sqrt(1/d)") {
    TimeEncoderParams enc{Tensor::parameter({4}, {0, 0, 0, 0}),
                          Tensor::parameter({4}, {0, 0, 0, 0})};
    auto phi = time_features(123, enc);
    for (std::size_t i = 0; i < 4; ++i) CHECK(phi[i] == doctest::Approx(0.5));
}

TEST_CASE("features stay within the cosine bound and unit norm") {
    std::mt19937_64 rng(4);
    auto enc = init_time_encoder(8, rng);
    double bound = std::sqrt(1.0 / 8.0);
    for (TimeId t : {0, 1, 17, 365, 5000}) {
        auto phi = time_features(t, enc);
        double norm_sq = 0.0;
        for (std::size_t i = 0; i < phi.size(); ++i) {
            CHECK(phi[i] <= bound + 1e-12);
            CHECK(phi[i] >= -bound - 1e-12);
            norm_sq += phi[i] * phi[i];
        }
        CHECK(norm_sq <= 1.0 + 1e-12);
    }
}

TEST_CASE("features are bitwise deterministic") {
    std::mt19937_64 rng(9);
    auto enc = init_time_encoder(6, rng);
    auto a = time_features(42, enc);
    auto b = time_features(42, enc);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("features match an independent scalar recomputation") {
    std::mt19937_64 rng(21);
    auto enc = init_time_encoder(5, rng);
    for (TimeId t = 0; t < 10; ++t) {
        auto phi = time_features(t, enc);
        for (std::size_t i = 0; i < 5; ++i) {
            double expected = std::sqrt(1.0 / 5.0) *
                              std::cos(enc.omega[i] * static_cast<double>(t) + enc.phase[i]);
            CHECK(phi[i] == doctest::Approx(expected).epsilon(1e-15));
        }
    }
}

TEST_CASE("identity-block fusion passes the relation vector through") {
    const std::size_t d = 3, d_t = 2;
    std::vector<double> w(d * (d + d_t), 0.0);
    for (std::size_t i = 0; i < d; ++i) w[i * (d + d_t) + i] = 1.0;
    RelationTimeFusionParams fusion{Tensor::parameter({d, d + d_t}, w)};
    std::mt19937_64 rng(3);
    auto enc = init_time_encoder(d_t, rng);
    auto h_r = Tensor::from({d}, {0.4, -0.2, 0.9});
    auto fused = relation_time_embedding(h_r, 7, fusion, enc);
    for (std::size_t i = 0; i < d; ++i) CHECK(fused[i] == doctest::Approx(h_r[i]));
}

TEST_CASE("time-only fusion block embeds the features") {
    const std::size_t d = 4, d_t = 4;
    std::vector<double> w(d * (d + d_t), 0.0);
    for (std::size_t i = 0; i < d_t; ++i) w[i * (d + d_t) + d + i] = 1.0;
    RelationTimeFusionParams fusion{Tensor::parameter({d, d + d_t}, w)};
    std::mt19937_64 rng(6);
    auto enc = init_time_encoder(d_t, rng);
    auto zero = Tensor::from({d}, std::vector<double>(d, 0.0));
    auto fused = relation_time_embedding(zero, 11, fusion, enc);
    auto phi = time_features(11, enc);
    for (std::size_t i = 0; i < d_t; ++i) CHECK(fused[i] == doctest::Approx(phi[i]));
}

TEST_CASE("random fusion matches a naive triple-loop oracle") {
    std::mt19937_64 rng(17);
    const std::size_t d = 5, d_t = 3;
    auto enc = init_time_encoder(d_t, rng);
    auto fusion = init_fusion(d, d_t, rng);
    auto h_r = num::uniform_init({d}, -1.0, 1.0, rng);
    auto fused = relation_time_embedding(h_r, 13, fusion, enc);

    auto phi = time_features(13, enc);
    for (std::size_t row = 0; row < d; ++row) {
        double acc = 0.0;
        for (std::size_t col = 0; col < d + d_t; ++col) {
            double x = col < d ? h_r[col] : phi[col - d];
            acc += fusion.weight.at(row, col) * x;
        }
        CHECK(fused[row] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("gradients flow through fusion, frequencies, and phases") {
    std::mt19937_64 rng(29);
    const std::size_t d = 4, d_t = 3;
    auto enc = init_time_encoder(d_t, rng);
    auto fusion = init_fusion(d, d_t, rng);
    auto h_r = num::uniform_init({d}, -1.0, 1.0, rng);
    num::ParamStore params{{"omega", enc.omega},
                           {"phase", enc.phase},
                           {"w_rt", fusion.weight},
                           {"h_r", h_r}};
    std::vector<double> probe{0.3, -0.7, 0.2, 0.5};
    auto result = num::grad_check(
        [&] {
            return num::dot(relation_time_embedding(h_r, 9, fusion, enc),
                            Tensor::from({d}, probe));
        },
        params);
    CHECK(result.max_rel_error < 1e-4);
}

TEST_CASE("fusion rejects mismatched dimensions") {
    std::mt19937_64 rng(1);
    auto enc = init_time_encoder(3, rng);
    auto fusion = init_fusion(4, 3, rng);
    auto wrong = Tensor::from({5}, std::vector<double>(5, 0.1));
    CHECK_THROWS_AS(relation_time_embedding(wrong, 2, fusion, enc), num::DimensionError);
}
