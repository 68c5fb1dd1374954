#include "precond/harness/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "precond/config.hpp"

namespace precond::harness {

namespace {

using Kind = CheckpointError::Kind;

constexpr char kMagic[4] = {'K', 'P', 'R', 'C'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out.push_back(std::byte{v}); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::byte> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::byte>& b) : buf(b) {}
  const std::byte* take(std::size_t n) {
    if (buf.size() - pos < n) {
      throw CheckpointError(Kind::Io, "truncated checkpoint at byte " + std::to_string(pos));
    }
    const std::byte* p = buf.data() + pos;
    pos += n;
    return p;
  }
  std::uint8_t u8() { return std::to_integer<std::uint8_t>(*take(1)); }
  std::uint16_t u16() {
    const std::byte* p = take(2);
    return static_cast<std::uint16_t>(std::to_integer<unsigned>(p[0]) |
                                      (std::to_integer<unsigned>(p[1]) << 8));
  }
  std::uint32_t u32() {
    const std::byte* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::to_integer<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  bool done() const { return pos == buf.size(); }

  const std::vector<std::byte>& buf;
  std::size_t pos = 0;
};

std::size_t tensor_count(Method m) { return is_soap_type(m) ? 11 : 8; }

Tensor matrix_tensor(const StorageMatrix& m) {
  return {m.precision(), {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
          m};
}

Tensor vector_tensor(const StorageMatrix& column) {
  return {column.precision(), {static_cast<std::uint32_t>(column.rows())}, column};
}

Tensor scalar_tensor(std::uint64_t v) {
  const double x = static_cast<double>(v);
  return {Precision::FP64, {}, StorageMatrix::from_values(1, 1, std::span<const double>(&x, 1))};
}

std::uint64_t scalar_value(const Tensor& t) {
  if (t.dims.size() != 0 || t.dtype != Precision::FP64) {
    throw CheckpointError(Kind::Format, "counter tensor must be a rank-0 FP64 scalar");
  }
  return static_cast<std::uint64_t>(t.data(0, 0));
}

void check_dtype(const Tensor& t, Precision want, const char* name) {
  if (t.dtype != want) {
    throw CheckpointError(Kind::PrecisionMismatch,
                          std::string("tensor '") + name + "' stored as " +
                              std::string(to_string(t.dtype)) + ", run expects " +
                              std::string(to_string(want)));
  }
}

const StorageMatrix& matrix_of(const Tensor& t, std::size_t rows, std::size_t cols,
                               const char* name) {
  const bool ok = (t.dims.size() == 2 && t.dims[0] == rows && t.dims[1] == cols) ||
                  (t.dims.size() == 1 && t.dims[0] == rows && cols == 1);
  if (!ok) throw CheckpointError(Kind::Format, std::string("tensor '") + name + "' has wrong shape");
  return t.data;
}

}  // namespace

std::vector<std::byte> encode(const std::vector<LayerRecord>& layers) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const LayerRecord& layer : layers) {
    w.u8(static_cast<std::uint8_t>(layer.parametrization));
    w.u8(static_cast<std::uint8_t>(layer.method));
    for (const Tensor& t : layer.tensors) {
      w.u8(static_cast<std::uint8_t>(t.dtype));
      w.u8(static_cast<std::uint8_t>(t.dims.size()));
      for (std::uint32_t d : t.dims) w.u32(d);
      const auto raw = t.data.converted(t.dtype).raw_bytes();
      w.bytes(raw.data(), raw.size());
    }
  }
  return std::move(w.out);
}

std::vector<LayerRecord> decode(const std::vector<std::byte>& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(4), kMagic, 4) != 0) {
    throw CheckpointError(Kind::Format, "bad magic, not a checkpoint");
  }
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::Format, "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<LayerRecord> layers;
  for (std::uint32_t l = 0; l < count; ++l) {
    LayerRecord rec;
    const std::uint8_t param = r.u8();
    const std::uint8_t method = r.u8();
    if (param > 1) throw CheckpointError(Kind::Format, "bad parametrization code");
    if (method > 2) throw CheckpointError(Kind::Format, "bad method code");
    rec.parametrization = static_cast<Parametrization>(param);
    rec.method = static_cast<Method>(method);
    for (std::size_t i = 0; i < tensor_count(rec.method); ++i) {
      Tensor t;
      const std::uint8_t dtype = r.u8();
      if (dtype > 2) throw CheckpointError(Kind::Format, "bad dtype code " + std::to_string(dtype));
      t.dtype = static_cast<Precision>(dtype);
      const std::uint8_t rank = r.u8();
      if (rank > 2) throw CheckpointError(Kind::Format, "bad tensor rank " + std::to_string(rank));
      std::size_t elems = 1;
      for (std::uint8_t k = 0; k < rank; ++k) {
        t.dims.push_back(r.u32());
        elems *= t.dims.back();
      }
      const std::size_t rows = rank == 0 ? 1 : t.dims[0];
      const std::size_t cols = rank == 2 ? t.dims[1] : 1;
      const std::size_t width = dtype == 0 ? 8 : dtype == 1 ? 4 : 2;
      const std::byte* p = r.take(elems * width);
      t.data = StorageMatrix::from_raw_bytes(rows, cols, t.dtype,
                                             std::span<const std::byte>(p, elems * width));
      rec.tensors.push_back(std::move(t));
    }
    layers.push_back(std::move(rec));
  }
  if (!r.done()) throw CheckpointError(Kind::Format, "trailing bytes after last layer");
  return layers;
}

LayerRecord to_record(const LayerState& s) {
  LayerRecord rec{s.parametrization(), s.method, {}};
  auto& t = rec.tensors;
  t.push_back(matrix_tensor(s.theta));
  for (const FactorState* f : {&s.factor1, &s.factor2}) {
    t.push_back(vector_tensor(f->lambda_storage()));
    t.push_back(matrix_tensor(f->basis()));
    t.push_back(matrix_tensor(f->companion()));
  }
  if (is_soap_type(s.method)) {
    if (!s.moments) throw CheckpointError(Kind::Format, "SOAP-type layer without moments");
    t.push_back(matrix_tensor(s.moments->m));
    t.push_back(matrix_tensor(s.moments->d_second));
    t.push_back(scalar_tensor(s.moments->t));
  }
  t.push_back(scalar_tensor(s.step_count));
  return rec;
}

LayerState from_record(const LayerRecord& rec, std::optional<Precision> expected_storage,
                       std::uint64_t layer_id) {
  if (rec.tensors.size() != tensor_count(rec.method)) {
    throw CheckpointError(Kind::Format, "wrong tensor count for method");
  }
  const Tensor& theta = rec.tensors[0];
  if (theta.dims.size() != 2) throw CheckpointError(Kind::Format, "theta must be rank 2");
  const Precision storage = rec.tensors[2].dtype;
  if (expected_storage) {
    check_dtype(theta, weight_precision(*expected_storage), "theta");
    const char* names[] = {"lambda1", "Q1", "companion1", "lambda2", "Q2", "companion2", "m", "v"};
    const std::size_t n_state = is_soap_type(rec.method) ? 8 : 6;
    for (std::size_t i = 0; i < n_state; ++i) {
      check_dtype(rec.tensors[1 + i], *expected_storage, names[i]);
    }
  }

  const std::size_t d1 = theta.dims[0], d2 = theta.dims[1];
  LayerState s;
  s.theta = theta.data;
  s.factor1 = FactorState(d1, rec.parametrization, storage);
  s.factor2 = FactorState(d2, rec.parametrization, storage);
  std::size_t i = 1;
  for (auto [f, d] : {std::pair{&s.factor1, d1}, std::pair{&s.factor2, d2}}) {
    for (int k = 0; k < 3; ++k) {
      if (rec.tensors[i + k].dtype != storage) {
        throw CheckpointError(Kind::Format, "factor tensors disagree on precision");
      }
    }
    f->set_lambda(matrix_of(rec.tensors[i], d, 1, "lambda"));
    f->set_basis(matrix_of(rec.tensors[i + 1], d, d, "basis"));
    f->set_companion(matrix_of(rec.tensors[i + 2], d, d, "companion"));
    i += 3;
  }
  if (is_soap_type(rec.method)) {
    RotatedMoments mo;
    mo.m = matrix_of(rec.tensors[7], d1, d2, "m");
    mo.d_second = matrix_of(rec.tensors[8], d1, d2, "v");
    mo.t = scalar_value(rec.tensors[9]);
    s.moments = std::move(mo);
  }
  s.step_count = scalar_value(rec.tensors.back());
  s.ledger = CostLedger(d1, d2);
  s.method = rec.method;
  s.layer_id = layer_id;
  return s;
}

void save_checkpoint(const std::string& path, const std::vector<LayerState>& layers) {
  std::vector<LayerRecord> records;
  for (const LayerState& s : layers) records.push_back(to_record(s));
  const auto bytes = encode(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::Io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::Io, "write to '" + path + "' failed");
}

std::vector<LayerRecord> read_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open '" + path + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(raw.size());
  std::memcpy(bytes.data(), raw.data(), raw.size());
  return decode(bytes);
}

std::vector<LayerState> load_checkpoint(const std::string& path,
                                        std::optional<Precision> expected_storage) {
  std::vector<LayerState> layers;
  std::uint64_t id = 0;
  for (const LayerRecord& rec : read_records(path)) {
    layers.push_back(from_record(rec, expected_storage, id++));
  }
  return layers;
}

}  // namespace precond::harness
