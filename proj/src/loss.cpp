#include "vtonsift/loss.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "vtonsift/error.hpp"

namespace vtonsift {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t pos, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
  return v;
}

bool grids_match(const ReferenceAttention& ref, const AttentionTensor& attn) {
  if (ref.query_grid.cells() != attn.queries || ref.key_grid.cells() != attn.keys) return false;
  auto same_dims = [](const GridSpec& a, const GridSpec& b) { return a.grid_h == b.grid_h && a.grid_w == b.grid_w; };
  if (attn.query_grid && !same_dims(*attn.query_grid, ref.query_grid)) return false;
  if (attn.key_grid && !same_dims(*attn.key_grid, ref.key_grid)) return false;
  return true;
}

}  // namespace

double AttentionTensor::max_row_deviation() const {
  if (weights.size() != layers * heads * queries * keys) {
    throw Error(ErrorCode::DimMismatch, "attention weight count does not match dimensions");
  }
  double worst = 0.0;
  for (std::size_t r = 0; r < layers * heads * queries; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < keys; ++j) {
      const double v = weights[r * keys + j];
      if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "attention weight negative or non-finite");
      sum += v;
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

double sift_loss_per_query(std::span<const double> p, std::span<const double> q, double epsilon_floor) {
  if (p.size() != q.size()) {
    throw Error(ErrorCode::LengthMismatch, "p has " + std::to_string(p.size()) + " entries, q has " + std::to_string(q.size()));
  }
  double loss = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] == 0.0) continue;
    loss -= p[j] * std::log(std::max(q[j], epsilon_floor));
  }
  return loss;
}

const ReferenceAttention& reference_for(std::span<const ReferenceAttention> refs, const AttentionTensor& attn) {
  for (const auto& ref : refs)
    if (grids_match(ref, attn)) return ref;
  throw Error(ErrorCode::ResolutionMismatch, "no reference matches attention with " + std::to_string(attn.queries) +
                                                 " queries and " + std::to_string(attn.keys) + " keys");
}

double sift_loss_total(std::span<const ReferenceAttention> refs, std::span<const AttentionTensor> attn,
                       double epsilon_floor) {
  double sum = 0.0;
  double terms = 0.0;
  for (const auto& tensor : attn) {
    if (tensor.weights.size() != tensor.layers * tensor.heads * tensor.queries * tensor.keys) {
      throw Error(ErrorCode::DimMismatch, "attention weight count does not match dimensions");
    }
    const ReferenceAttention& ref = reference_for(refs, tensor);
    for (std::size_t l = 0; l < tensor.layers; ++l) {
      for (std::size_t h = 0; h < tensor.heads; ++h) {
        for (const auto& [i, dist] : ref.entries) {
          const auto row = tensor.row(l, h, i);
          double term = 0.0;
          for (std::size_t k = 0; k < dist.bins.size(); ++k) {
            term -= dist.probability(k) * std::log(std::max(row[dist.bins[k].first], epsilon_floor));
          }
          sum += term;
        }
      }
    }
    terms += static_cast<double>(tensor.layers * tensor.heads * ref.entries.size());
  }
  return terms > 0.0 ? sum / terms : 0.0;
}

double sift_contribution(std::int64_t t, double sift_term, const LossConfig& cfg) {
  return t <= cfg.eta ? cfg.lambda_sift * sift_term : 0.0;
}

double combined_loss(double denoise_term, std::int64_t t, double sift_term, const LossConfig& cfg) {
  const double weight = cfg.omega ? cfg.omega(t) : 1.0;
  const double base = weight * denoise_term;
  if (t > cfg.eta) return base;
  return base + cfg.lambda_sift * sift_term;
}

std::vector<double> sift_loss_gradient(std::span<const double> p, std::span<const double> q, double scale) {
  if (p.size() != q.size()) throw Error(ErrorCode::LengthMismatch, "p and q lengths differ");
  std::vector<double> g(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) g[j] = scale * (q[j] - p[j]);
  return g;
}

std::vector<std::uint8_t> encode_attention(const AttentionTensor& attn) {
  if (attn.weights.size() != attn.layers * attn.heads * attn.queries * attn.keys) {
    throw Error(ErrorCode::DimMismatch, "attention weight count does not match dimensions");
  }
  std::vector<std::uint8_t> out = {'A', 'T', 'N', '1'};
  put_u32(out, 4);
  for (std::size_t d : {attn.layers, attn.heads, attn.queries, attn.keys}) put_u64(out, d);
  out.reserve(out.size() + attn.weights.size() * 4);
  for (double w : attn.weights) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(w)));
  return out;
}

AttentionTensor decode_attention(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "ATN1", 4) != 0) throw Error(ErrorCode::ParseError, "missing ATN1 magic");
  const auto rank = get_le(bytes, 4, 4);
  if (rank != 4) throw Error(ErrorCode::ParseError, "ATN1 rank must be 4, got " + std::to_string(rank));
  if (bytes.size() < 8 + 4 * 8) throw Error(ErrorCode::ParseError, "ATN1 header truncated");
  std::uint64_t dims[4];
  for (int i = 0; i < 4; ++i) dims[i] = get_le(bytes, 8 + 8 * i, 8);
  const std::size_t header = 8 + 32;
  std::uint64_t count = 1;
  for (auto d : dims) {
    if (d == 0 || d > (1ull << 32)) throw Error(ErrorCode::ParseError, "ATN1 dimension out of range");
    count *= d;
    if (count > (1ull << 34)) throw Error(ErrorCode::ParseError, "ATN1 tensor too large");
  }
  if (bytes.size() != header + count * 4) throw Error(ErrorCode::ParseError, "ATN1 payload size mismatch");
  AttentionTensor attn(dims[0], dims[1], dims[2], dims[3]);
  for (std::size_t i = 0; i < count; ++i) {
    const auto bits = static_cast<std::uint32_t>(get_le(bytes, header + 4 * i, 4));
    attn.weights[i] = std::bit_cast<float>(bits);
  }
  return attn;
}

void write_attention(const std::filesystem::path& path, const AttentionTensor& attn) {
  write_file(path, encode_attention(attn));
}

AttentionTensor read_attention(const std::filesystem::path& path) { return decode_attention(read_file(path)); }

}  // namespace vtonsift
