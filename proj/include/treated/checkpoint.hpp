#pragma once

// Binary checkpoints for victims and ensembles.
//
// Layout (all integers and floats little-endian):
//   "TRTD" | u32 version | u32 record | u32 head_kind | u64 vocab_hash
//   | u64 vocab_size | u64 dim | u64 classes | u64 hidden | u64 filters
//   | u64 kernel | u64 n_refs | u64 slice_width
//   | f64 payload in tensors() order | u32 CRC32 of everything before it
//
// The vocabulary lives next to the checkpoint as "<path>.vocab", one token
// per line, and is tied to it through vocab_hash.

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>
#include <variant>
#include <vector>

#include "treated/ensemble.hpp"
#include "treated/errors.hpp"
#include "treated/models.hpp"
#include "treated/textcore.hpp"

namespace treated {

inline constexpr std::array<char, 4> kCheckpointMagic{'T', 'R', 'T', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class RecordKind : std::uint32_t { Model = 1, Treated = 2, Stm = 3 };

inline std::string vocab_path_for(const std::string& checkpoint_path) { return checkpoint_path + ".vocab"; }

inline std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void tensor(const Tensor2& t) {
    for (double v : t.data()) f64(v);
  }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void tensor(Tensor2& t) {
    for (auto& v : t.data()) v = f64();
  }
  std::size_t remaining() const noexcept { return end_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw CheckpointError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

struct Header {
  RecordKind record = RecordKind::Model;
  HeadKind head_kind = HeadKind::MeanPool;
  std::uint64_t vocab_hash = 0;
  std::uint64_t vocab_size = 0;
  std::uint64_t dim = 0;
  std::uint64_t classes = 0;
  std::uint64_t hidden = 0;
  std::uint64_t filters = 0;
  std::uint64_t kernel = 0;
  std::uint64_t n_refs = 0;
  std::uint64_t slice_width = 0;

  ModelConfig model_config() const {
    ModelConfig c;
    c.kind = head_kind;
    c.dim = dim;
    c.hidden = hidden;
    c.classes = classes;
    c.filters = head_kind == HeadKind::Cnn ? filters : c.filters;
    c.kernel = head_kind == HeadKind::Cnn ? kernel : c.kernel;
    return c;
  }
};

inline Header header_for(RecordKind record, const Tensor2& embedding, const HeadShape& head,
                         const Vocabulary& vocab, std::size_t n_refs, std::size_t slice_width) {
  if (embedding.rows() != vocab.size()) {
    throw CheckpointError("embedding has " + std::to_string(embedding.rows()) + " rows but vocabulary has " +
                          std::to_string(vocab.size()) + " tokens");
  }
  Header h;
  h.record = record;
  h.head_kind = head.kind;
  h.vocab_hash = vocab.hash();
  h.vocab_size = vocab.size();
  h.dim = embedding.cols();
  h.classes = head.classes;
  h.hidden = head.hidden;
  h.filters = head.kind == HeadKind::Cnn ? head.filters : 0;
  h.kernel = head.kind == HeadKind::Cnn ? head.kernel : 0;
  h.n_refs = n_refs;
  h.slice_width = slice_width;
  return h;
}

inline void write_header(ByteWriter& w, const Header& h) {
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(h.record));
  w.u32(static_cast<std::uint32_t>(h.head_kind));
  for (std::uint64_t v : {h.vocab_hash, h.vocab_size, h.dim, h.classes, h.hidden, h.filters, h.kernel,
                          h.n_refs, h.slice_width}) {
    w.u64(v);
  }
}

inline void write_file(const std::string& path, ByteWriter& w, const Vocabulary& vocab) {
  w.u32(crc32_of(w.bytes().data(), w.bytes().size()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path);
  vocab.save(vocab_path_for(path));
}

constexpr std::size_t kHeaderBytes = 4 + 3 * 4 + 9 * 8;

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

struct Checkpoint {
  std::variant<Model, ReferenceEnsemble, StmEnsemble> content;
  Vocabulary vocab;
};

inline void save_model(const Model& model, const Vocabulary& vocab, const std::string& path) {
  detail::ByteWriter w;
  detail::write_header(w, detail::header_for(RecordKind::Model, model.embedding, model.head.shape, vocab, 0, 0));
  for (const auto* t : model.tensors()) w.tensor(*t);
  detail::write_file(path, w, vocab);
}

inline void save_ensemble(const ReferenceEnsemble& ens, const Vocabulary& vocab, const std::string& path) {
  detail::ByteWriter w;
  detail::write_header(w, detail::header_for(RecordKind::Treated, ens.embedding, ens.victim_head.shape, vocab,
                                             ens.n_refs, ens.slice_width()));
  for (const auto* t : ens.tensors()) w.tensor(*t);
  detail::write_file(path, w, vocab);
}

inline void save_stm(const StmEnsemble& stm, const Vocabulary& vocab, const std::string& path) {
  if (stm.models.empty()) throw CheckpointError("cannot save an empty STM ensemble");
  const auto& first = stm.models.front();
  for (const auto& m : stm.models) {
    if (!(m.head.shape == first.head.shape) || !m.embedding.same_shape(first.embedding)) {
      throw CheckpointError("STM members must share architecture");
    }
  }
  detail::ByteWriter w;
  detail::write_header(w, detail::header_for(RecordKind::Stm, first.embedding, first.head.shape, vocab,
                                             stm.models.size(), 0));
  for (const auto& m : stm.models) {
    for (const auto* t : m.tensors()) w.tensor(*t);
  }
  detail::write_file(path, w, vocab);
}

namespace detail {

inline Header parse_header(ByteReader& r, const std::string& path) {
  Header h;
  r.u32();  // magic, already verified
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported format version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t record = r.u32();
  if (record < 1 || record > 3) throw CheckpointError(path + ": unknown record kind " + std::to_string(record));
  h.record = static_cast<RecordKind>(record);
  const std::uint32_t head = r.u32();
  if (head > 1) throw CheckpointError(path + ": unknown head kind " + std::to_string(head));
  h.head_kind = static_cast<HeadKind>(head);
  h.vocab_hash = r.u64();
  h.vocab_size = r.u64();
  h.dim = r.u64();
  h.classes = r.u64();
  h.hidden = r.u64();
  h.filters = r.u64();
  h.kernel = r.u64();
  h.n_refs = r.u64();
  h.slice_width = r.u64();
  return h;
}

inline void read_tensors(ByteReader& r, const std::vector<Tensor2*>& tensors) {
  for (auto* t : tensors) r.tensor(*t);
}

inline std::size_t payload_doubles(const std::vector<Tensor2*>& tensors) {
  std::size_t n = 0;
  for (auto* t : tensors) n += t->size();
  return n;
}

}  // namespace detail

inline Checkpoint load_checkpoint(const std::string& path, const Vocabulary* expected_vocab = nullptr) {
  const auto bytes = detail::read_bytes(path);
  if (bytes.size() < detail::kHeaderBytes + 4) {
    throw CheckpointError(path + ": checksum error (file truncated to " + std::to_string(bytes.size()) + " bytes)");
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
  if (detail::crc32_of(bytes.data(), body) != stored) {
    throw CheckpointError(path + ": checksum error (CRC32 mismatch; file corrupted or truncated)");
  }
  if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw CheckpointError(path + ": bad magic bytes, not a TRTD checkpoint");
  }
  detail::ByteReader r(bytes, body);
  const detail::Header h = detail::parse_header(r, path);

  Checkpoint ck;
  if (expected_vocab) {
    ck.vocab = *expected_vocab;
  } else {
    ck.vocab = Vocabulary::load(vocab_path_for(path));
  }
  if (ck.vocab.hash() != h.vocab_hash) {
    throw CheckpointError(path + ": vocabulary hash mismatch: checkpoint expects " + hex64(h.vocab_hash) +
                          ", vocabulary has " + hex64(ck.vocab.hash()));
  }
  if (h.vocab_size != ck.vocab.size()) {
    throw CheckpointError(path + ": dimension mismatch: vocab_size " + std::to_string(h.vocab_size) +
                          " vs " + std::to_string(ck.vocab.size()) + " tokens");
  }
  const ModelConfig mc = h.model_config();
  auto check_payload = [&](const std::vector<Tensor2*>& tensors) {
    const std::size_t expected = detail::payload_doubles(tensors) * 8;
    if (r.remaining() != expected) {
      throw CheckpointError(path + ": dimension mismatch: header implies " + std::to_string(expected) +
                            " payload bytes, file has " + std::to_string(r.remaining()));
    }
    detail::read_tensors(r, tensors);
  };

  try {
    switch (h.record) {
      case RecordKind::Model: {
        Model m;
        m.embedding = Tensor2(h.vocab_size, h.dim);
        m.head = HeadParams::zeros(mc.head_shape(h.dim));
        check_payload(m.tensors());
        ck.content = std::move(m);
        break;
      }
      case RecordKind::Treated: {
        if (h.n_refs < 2 || h.n_refs * h.slice_width != h.dim) {
          throw CheckpointError(path + ": dimension mismatch: n_refs " + std::to_string(h.n_refs) +
                                " x slice_width " + std::to_string(h.slice_width) + " != dim " +
                                std::to_string(h.dim));
        }
        ReferenceEnsemble e;
        e.n_refs = h.n_refs;
        e.embedding = Tensor2(h.vocab_size, h.dim);
        e.victim_head = HeadParams::zeros(mc.head_shape(h.dim));
        e.ref_head = HeadParams::zeros(mc.head_shape(h.slice_width));
        check_payload(e.tensors());
        ck.content = std::move(e);
        break;
      }
      case RecordKind::Stm: {
        if (h.n_refs < 1) throw CheckpointError(path + ": STM checkpoint with no members");
        StmEnsemble s;
        std::vector<Tensor2*> all;
        s.models.resize(h.n_refs);
        for (auto& m : s.models) {
          m.embedding = Tensor2(h.vocab_size, h.dim);
          m.head = HeadParams::zeros(mc.head_shape(h.dim));
          for (auto* t : m.tensors()) all.push_back(t);
        }
        check_payload(all);
        ck.content = std::move(s);
        break;
      }
    }
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(path + ": dimension mismatch: " + e.what());
  }
  return ck;
}

template <typename T>
T load_as(const std::string& path, const Vocabulary* vocab, const char* what) {
  auto ck = load_checkpoint(path, vocab);
  if (auto* p = std::get_if<T>(&ck.content)) return std::move(*p);
  throw CheckpointError(path + ": checkpoint does not hold " + what);
}

/// Loads a victim model, verifying it was saved against `vocab`.
inline Model load_model(const std::string& path, const Vocabulary& vocab) {
  return load_as<Model>(path, &vocab, "a victim model");
}

inline ReferenceEnsemble load_ensemble(const std::string& path, const Vocabulary& vocab) {
  return load_as<ReferenceEnsemble>(path, &vocab, "a TREATED ensemble");
}

inline StmEnsemble load_stm(const std::string& path, const Vocabulary& vocab) {
  return load_as<StmEnsemble>(path, &vocab, "an STM ensemble");
}

}  // namespace treated
