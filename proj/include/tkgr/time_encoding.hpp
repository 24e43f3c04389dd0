#pragma once
// Fourier-feature time encoding and the fused relation-time embedding shared
// by the GNN and the path transformer.
//
//   phi(t)_i = sqrt(1/d_t) * cos(omega_i * t + phase_i)
//   h_{r,t}  = W_rt [h_r || phi(t)]

#include "tkgr/optim.hpp"
#include "tkgr/tensor.hpp"
#include "tkgr/tkg.hpp"

namespace tkgr {

struct TimeEncoderParams {
    num::Tensor omega;  // (d_t) frequencies, learnable
    num::Tensor phase;  // (d_t) phases, learnable

    std::size_t dim() const { return omega.size(); }
};

struct RelationTimeFusionParams {
    num::Tensor weight;  // (d_r, d_r + d_t)
};

// Frequencies log-uniform in [1e-3, 1], phases uniform in [0, 2*pi).
TimeEncoderParams init_time_encoder(std::size_t d_t, std::mt19937_64& rng);
RelationTimeFusionParams init_fusion(std::size_t d_r, std::size_t d_t, std::mt19937_64& rng);

void register_time_encoder(num::ParamStore& store, const std::string& prefix,
                           const TimeEncoderParams& enc);
TimeEncoderParams time_encoder_from_store(const num::ParamStore& store,
                                          const std::string& prefix);

num::Tensor time_features(TimeId t, const TimeEncoderParams& params);

num::Tensor relation_time_embedding(const num::Tensor& relation_vec, TimeId t,
                                    const RelationTimeFusionParams& fusion,
                                    const TimeEncoderParams& enc);

}  // namespace tkgr
