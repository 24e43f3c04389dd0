#include "tkgr/time_encoding.hpp"

#include <cmath>

namespace tkgr {

using num::Tensor;

TimeEncoderParams init_time_encoder(std::size_t d_t, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> omega(d_t), phase(d_t);
    for (auto& w : omega) w = std::exp(std::log(1e-3) + unit(rng) * std::log(1e3));
    for (auto& p : phase) p = unit(rng) * 2.0 * M_PI;
    return {Tensor::parameter({d_t}, std::move(omega)), Tensor::parameter({d_t}, std::move(phase))};
}

RelationTimeFusionParams init_fusion(std::size_t d_r, std::size_t d_t, std::mt19937_64& rng) {
    return {num::xavier_init({d_r, d_r + d_t}, rng)};
}

void register_time_encoder(num::ParamStore& store, const std::string& prefix,
                           const TimeEncoderParams& enc) {
    store[prefix + ".omega"] = enc.omega;
    store[prefix + ".phase"] = enc.phase;
}

TimeEncoderParams time_encoder_from_store(const num::ParamStore& store,
                                          const std::string& prefix) {
    return {store.at(prefix + ".omega"), store.at(prefix + ".phase")};
}

num::Tensor time_features(TimeId t, const TimeEncoderParams& params) {
    std::size_t d_t = params.dim();
    auto t_vec = Tensor::constant({d_t}, static_cast<double>(t));
    auto angle = num::add(num::mul(params.omega, t_vec), params.phase);
    return num::scale(num::cosine(angle), std::sqrt(1.0 / static_cast<double>(d_t)));
}

num::Tensor relation_time_embedding(const num::Tensor& relation_vec, TimeId t,
                                    const RelationTimeFusionParams& fusion,
                                    const TimeEncoderParams& enc) {
    auto fused = num::concat({relation_vec, time_features(t, enc)});
    return num::matmul(fusion.weight, fused);
}

}  // namespace tkgr
