#pragma once

#include <cstddef>
#include <mutex>
#include <optional>
#include <vector>

#include "vit/ops.hpp"
#include "vit/tape.hpp"
#include "vit/tensor.hpp"

namespace vit {

/// Multi-head self-attention parameters for one layer.
///
/// qkv_w is [D x 3D] with column blocks [q | k | v]; inside each block head h
/// owns columns h*Dh .. (h+1)*Dh. out_w is [(k*Dh) x D]. rel_table, when
/// present, is [R x D] with the same per-head column split.
template <typename T>
struct MSAParams {
  std::size_t heads = 1;
  const Parameter<T>* qkv_w = nullptr;
  const Parameter<T>* qkv_b = nullptr;  // optional
  const Parameter<T>* out_w = nullptr;
  const Parameter<T>* out_b = nullptr;
  const Parameter<T>* rel_table = nullptr;  // optional
};

/// One captured N' x N' attention matrix.
struct AttentionRecord {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t image = 0;
  Tensor<double> matrix;
};

class AttentionSink {
 public:
  virtual ~AttentionSink() = default;
  virtual void record(AttentionRecord rec) = 0;
};

/// Thread-safe sink that keeps every record in arrival order.
class AttentionCollector final : public AttentionSink {
 public:
  void record(AttentionRecord rec) override {
    std::lock_guard lock(mutex_);
    records_.push_back(std::move(rec));
  }
  const std::vector<AttentionRecord>& records() const { return records_; }
  std::vector<AttentionRecord> take() { return std::move(records_); }

 private:
  std::mutex mutex_;
  std::vector<AttentionRecord> records_;
};

template <typename T>
struct QKV {
  Var<T> q, k, v;  // each [B*heads x N' x Dh]
};

/// Per-layer attention options shared by the functions below.
template <typename T>
struct AttentionContext {
  std::size_t layer = 0;
  std::size_t image_offset = 0;
  AttentionSink* sink = nullptr;
  double dropout = 0.0;
  bool training = false;
  Rng* rng = nullptr;
  /// Key offset index [N' x N'] for relative attention (see relative_offset_index).
  const std::vector<std::size_t>* rel_index = nullptr;
};

/// z [B x N' x D] -> per-head q, k, v of shape [B*k x N' x Dh].
template <typename T>
QKV<T> qkv_project(Tape<T>& tape, const Var<T>& z, const MSAParams<T>& params);

/// softmax(q k^T / sqrt(Dh) + bias) row-wise. q, k: [G x N' x Dh];
/// bias (optional) [G x N' x N'].
template <typename T>
Var<T> attention_weights(const Var<T>& q, const Var<T>& k, const std::optional<Var<T>>& bias = std::nullopt);

/// Per-head outputs A v, [B*k x N' x Dh]. Copies each A into the context's
/// sink (image index = image_offset + batch position).
template <typename T>
Var<T> self_attention(Tape<T>& tape, const Var<T>& z, const MSAParams<T>& params, const AttentionContext<T>& ctx);

/// Concatenated heads projected by U_msa: [B x N' x D].
template <typename T>
Var<T> multi_head(Tape<T>& tape, const Var<T>& z, const MSAParams<T>& params, const AttentionContext<T>& ctx);

/// Number of rows of a relative offset table for a grid: one row per 2-D
/// offset in [-(Gh-1), Gh-1] x [-(Gw-1), Gw-1] plus a final class-token row.
std::size_t relative_table_rows(std::size_t grid_h, std::size_t grid_w);

/// Row index into the relative table for every (query, key) token pair,
/// flattened [N' x N']. Token 0 is the class token; patch n sits at
/// (n / Gw, n % Gw). Pairs involving the class token use the last row.
std::vector<std::size_t> relative_offset_index(std::size_t grid_h, std::size_t grid_w);

/// bias[g, i, j] = q[g, i] . table_h[index(i, j)] where table_h is the
/// head's column slice of table [R x D]. Result [B*k x N' x N'].
template <typename T>
Var<T> relative_bias(const Var<T>& q, const Var<T>& table, const std::vector<std::size_t>& index, std::size_t heads);

}  // namespace vit
