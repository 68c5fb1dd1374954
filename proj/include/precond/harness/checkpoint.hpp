#pragma once

// Binary optimizer-state checkpoints.
//
//   "KPRC" | version u16 | layer count u32
//   per layer: parametrization u8 | method u8 | tensors
//   per tensor: dtype u8 (0 FP64, 1 FP32, 2 BF16) | rank u8 | dims u32... |
//               raw little-endian buffer
//
// Tensor order per layer: theta, lambda1, Q1, companion1, lambda2, Q2,
// companion2, then m, v and the moment counter t for SOAP-type layers, then
// step_count. Counters are rank-0 FP64 tensors. The tensor count follows from
// the method byte.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "precond/matcore.hpp"
#include "precond/state.hpp"

namespace precond::harness {

inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, Format, PrecisionMismatch };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct Tensor {
  Precision dtype = Precision::FP64;
  std::vector<std::uint32_t> dims;
  StorageMatrix data;  // rank 0 and 1 tensors are stored as n x 1
};

struct LayerRecord {
  Parametrization parametrization = Parametrization::New;
  Method method = Method::KlShampoo;
  std::vector<Tensor> tensors;
};

std::vector<std::byte> encode(const std::vector<LayerRecord>& layers);
/// Throws CheckpointError(Format) on bad magic/version/dtype, Io on truncation.
std::vector<LayerRecord> decode(const std::vector<std::byte>& bytes);

LayerRecord to_record(const LayerState& state);
/// Rebuilds a layer. With `expected_storage` set, any optimizer-state tensor
/// at a different precision raises CheckpointError(PrecisionMismatch).
LayerState from_record(const LayerRecord& record, std::optional<Precision> expected_storage,
                       std::uint64_t layer_id);

void save_checkpoint(const std::string& path, const std::vector<LayerState>& layers);
std::vector<LayerState> load_checkpoint(const std::string& path,
                                        std::optional<Precision> expected_storage);
std::vector<LayerRecord> read_records(const std::string& path);

}  // namespace precond::harness
