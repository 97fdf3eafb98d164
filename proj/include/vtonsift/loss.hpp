#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "vtonsift/reference.hpp"

namespace vtonsift {

// Dense attention weights q[l][h][i][j], row-major in that order.
struct AttentionTensor {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<double> weights;
  // When set, resolution matching also compares grid dimensions.
  std::optional<GridSpec> query_grid;
  std::optional<GridSpec> key_grid;

  AttentionTensor() = default;
  AttentionTensor(std::size_t l, std::size_t h, std::size_t nq, std::size_t nk, double fill = 0.0)
      : layers(l), heads(h), queries(nq), keys(nk), weights(l * h * nq * nk, fill) {}

  std::size_t offset(std::size_t l, std::size_t h, std::size_t i) const { return ((l * heads + h) * queries + i) * keys; }
  std::span<const double> row(std::size_t l, std::size_t h, std::size_t i) const {
    return {weights.data() + offset(l, h, i), keys};
  }
  std::span<double> row(std::size_t l, std::size_t h, std::size_t i) { return {weights.data() + offset(l, h, i), keys}; }

  // Max |sum_j q - 1| over all rows; throws when any weight is negative or
  // non-finite.
  double max_row_deviation() const;
};

struct LossConfig {
  double lambda_sift = 0.0005;
  std::int64_t eta = 500;
  double epsilon_floor = 1e-12;
  // Timestep weight applied to the denoising term.
  std::function<double(std::int64_t)> omega = [](std::int64_t) { return 1.0; };
};

// -sum_j p_j log(max(q_j, floor)); zero-probability terms contribute nothing.
double sift_loss_per_query(std::span<const double> p, std::span<const double> q, double epsilon_floor = 1e-12);

// Per-(layer, head, supervised query) cross-entropies summed and divided by
// sum over tensors of L*H*|M_SIFT| at that tensor's resolution. Returns 0 when
// no tensor has a supervised query.
double sift_loss_total(std::span<const ReferenceAttention> refs, std::span<const AttentionTensor> attn,
                       double epsilon_floor = 1e-12);

// Finds the reference whose grids match the tensor's shape; throws
// ResolutionMismatch when none does.
const ReferenceAttention& reference_for(std::span<const ReferenceAttention> refs, const AttentionTensor& attn);

// lambda * sift_term when t <= eta, else exactly 0.
double sift_contribution(std::int64_t t, double sift_term, const LossConfig& cfg);

double combined_loss(double denoise_term, std::int64_t t, double sift_term, const LossConfig& cfg);

// Gradient of the per-query loss w.r.t. the pre-softmax logits: scale*(q - p).
std::vector<double> sift_loss_gradient(std::span<const double> p, std::span<const double> q, double scale = 1.0);

// "ATN1" little-endian container: magic, u32 rank (4), u64 dims (L,H,Nq,Nk),
// f32 weights.
void write_attention(const std::filesystem::path& path, const AttentionTensor& attn);
AttentionTensor read_attention(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_attention(const AttentionTensor& attn);
AttentionTensor decode_attention(std::span<const std::uint8_t> bytes);

}  // namespace vtonsift
