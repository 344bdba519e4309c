#pragma once

// Bit-level lossy handoff: fixed-point quantization of a latent, closed-form
// BPSK bit error rates, and seeded independent bit flips.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cdiff/diffusion.hpp"
#include "cdiff/error.hpp"
#include "cdiff/rng.hpp"

namespace cdiff {

struct QuantizationSpec {
  int bits = 8;
  double lo = -4.0;
  double hi = 4.0;

  void validate() const {
    require(bits >= 1 && bits <= 16, "quantization bits must lie in [1, 16]");
    require(lo < hi, "quantization range needs lo < hi");
  }

  std::uint32_t max_code() const { return (1u << bits) - 1u; }

  friend bool operator==(const QuantizationSpec&, const QuantizationSpec&) = default;
};

/// Packed MSB-first codes plus what is needed to decode them.
struct BitStream {
  std::vector<std::uint8_t> bytes;
  std::uint32_t element_count = 0;
  QuantizationSpec qspec;

  std::size_t bit_length() const {
    return static_cast<std::size_t>(element_count) * static_cast<std::size_t>(qspec.bits);
  }

  bool bit(std::size_t i) const { return (bytes[i >> 3] >> (7 - (i & 7))) & 1u; }
  void flip(std::size_t i) { bytes[i >> 3] ^= static_cast<std::uint8_t>(1u << (7 - (i & 7))); }

  friend bool operator==(const BitStream&, const BitStream&) = default;
};

/// Bytes of the serialized header: u32 count, u8 bits, f64 lo, f64 hi.
inline constexpr std::size_t kBitStreamHeaderBytes = 4 + 1 + 8 + 8;

inline std::size_t hamming_distance(const BitStream& a, const BitStream& b) {
  require(a.bytes.size() == b.bytes.size(), "hamming distance needs equal-length streams");
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.bytes.size(); ++i)
    d += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(a.bytes[i] ^ b.bytes[i])));
  return d;
}

// ---------------------------------------------------------------------------
// Codec

inline std::uint32_t quantize_value(double v, const QuantizationSpec& q) {
  const double clamped = std::clamp(v, q.lo, q.hi);
  const double scaled = (clamped - q.lo) / (q.hi - q.lo) * q.max_code();
  const auto code = static_cast<std::uint32_t>(std::floor(scaled + 0.5));
  return std::min(code, q.max_code());
}

inline double dequantize_value(std::uint32_t code, const QuantizationSpec& q) {
  return q.lo + (static_cast<double>(code) / q.max_code()) * (q.hi - q.lo);
}

inline BitStream quantize(std::span<const double> values, const QuantizationSpec& qspec) {
  qspec.validate();
  BitStream out;
  out.qspec = qspec;
  out.element_count = static_cast<std::uint32_t>(values.size());
  out.bytes.assign((out.bit_length() + 7) / 8, 0);
  std::size_t pos = 0;
  for (double v : values) {
    const std::uint32_t code = quantize_value(v, qspec);
    for (int b = qspec.bits - 1; b >= 0; --b, ++pos) {
      if ((code >> b) & 1u) out.bytes[pos >> 3] |= static_cast<std::uint8_t>(1u << (7 - (pos & 7)));
    }
  }
  return out;
}

inline BitStream quantize(const Latent& latent, const QuantizationSpec& qspec) {
  return quantize(std::span<const double>(latent.data), qspec);
}

inline std::vector<std::uint32_t> unpack_codes(const BitStream& bits) {
  require(bits.bytes.size() == (bits.bit_length() + 7) / 8, "bitstream payload length mismatch");
  std::vector<std::uint32_t> codes(bits.element_count);
  std::size_t pos = 0;
  for (auto& code : codes) {
    std::uint32_t c = 0;
    for (int b = 0; b < bits.qspec.bits; ++b, ++pos) c = (c << 1) | (bits.bit(pos) ? 1u : 0u);
    code = c;
  }
  return codes;
}

struct LatentShape {
  int width = 0;
  int height = 0;
  int step = 0;
};

inline Latent dequantize(const BitStream& bits, const QuantizationSpec& qspec,
                         const LatentShape& shape) {
  qspec.validate();
  require(bits.qspec == qspec, "bitstream was encoded with a different quantization spec");
  const auto expected = static_cast<std::size_t>(shape.width) * static_cast<std::size_t>(shape.height);
  require(bits.element_count == expected, "bitstream element count does not match dimensions");
  const auto codes = unpack_codes(bits);
  std::vector<double> data(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) data[i] = dequantize_value(codes[i], qspec);
  return Latent(std::move(data), shape.width, shape.height, shape.step);
}

// ---------------------------------------------------------------------------
// Wire format

namespace detail {
template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint64_t raw = 0;
  if constexpr (std::is_same_v<T, double>) {
    raw = std::bit_cast<std::uint64_t>(value);
  } else {
    raw = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(raw >> (8 * i)));
}

inline std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t offset, std::size_t n) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in[offset + i]) << (8 * i);
  return v;
}
}  // namespace detail

inline std::vector<std::uint8_t> serialize(const BitStream& bits) {
  std::vector<std::uint8_t> out;
  out.reserve(kBitStreamHeaderBytes + bits.bytes.size());
  detail::put_le<std::uint32_t>(out, bits.element_count);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(bits.qspec.bits));
  detail::put_le<double>(out, bits.qspec.lo);
  detail::put_le<double>(out, bits.qspec.hi);
  out.insert(out.end(), bits.bytes.begin(), bits.bytes.end());
  return out;
}

inline BitStream deserialize_bitstream(std::span<const std::uint8_t> in) {
  if (in.size() < kBitStreamHeaderBytes) fail(ErrorKind::integrity, "bitstream shorter than header");
  BitStream bits;
  bits.element_count = static_cast<std::uint32_t>(detail::get_le(in, 0, 4));
  bits.qspec.bits = static_cast<int>(in[4]);
  bits.qspec.lo = std::bit_cast<double>(detail::get_le(in, 5, 8));
  bits.qspec.hi = std::bit_cast<double>(detail::get_le(in, 13, 8));
  if (bits.qspec.bits < 1 || bits.qspec.bits > 16 || !(bits.qspec.lo < bits.qspec.hi))
    fail(ErrorKind::integrity, "bitstream header carries an invalid quantization spec");
  const std::size_t payload = (bits.bit_length() + 7) / 8;
  if (in.size() != kBitStreamHeaderBytes + payload)
    fail(ErrorKind::integrity, "bitstream payload length does not match header");
  bits.bytes.assign(in.begin() + static_cast<std::ptrdiff_t>(kBitStreamHeaderBytes), in.end());
  return bits;
}

/// Serialized size in bits, header included.
inline std::size_t payload_bits(std::size_t elements, const QuantizationSpec& q) {
  return (kBitStreamHeaderBytes + (elements * static_cast<std::size_t>(q.bits) + 7) / 8) * 8;
}

// ---------------------------------------------------------------------------
// Channel models

struct FixedBer {
  double p = 0.0;
};
struct AwgnBpsk {
  double snr = 1.0;  // linear Eb/N0
};
struct RayleighBpsk {
  double mean_snr = 1.0;  // linear
};

struct ChannelModel {
  std::variant<FixedBer, AwgnBpsk, RayleighBpsk> kind;
  std::optional<double> bandwidth_hz;

  void validate() const {
    std::visit(
        [](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, FixedBer>) {
            require(m.p >= 0.0 && m.p <= 1.0, "fixed BER must lie in [0, 1]");
          } else if constexpr (std::is_same_v<M, AwgnBpsk>) {
            require(m.snr > 0.0, "AWGN snr must be positive");
          } else {
            require(m.mean_snr > 0.0, "Rayleigh mean snr must be positive");
          }
        },
        kind);
    if (bandwidth_hz) require(*bandwidth_hz >= 0.0, "bandwidth must be non-negative");
  }

  /// Link SNR when the model carries one.
  std::optional<double> snr() const {
    if (auto* a = std::get_if<AwgnBpsk>(&kind)) return a->snr;
    if (auto* r = std::get_if<RayleighBpsk>(&kind)) return r->mean_snr;
    return std::nullopt;
  }

  void set_snr(double snr) {
    if (auto* a = std::get_if<AwgnBpsk>(&kind)) a->snr = snr;
    if (auto* r = std::get_if<RayleighBpsk>(&kind)) r->mean_snr = snr;
  }

  std::string name() const {
    if (std::holds_alternative<FixedBer>(kind)) return "fixed";
    if (std::holds_alternative<AwgnBpsk>(kind)) return "awgn";
    return "rayleigh";
  }

  static ChannelModel fixed(double p) { return {FixedBer{p}, std::nullopt}; }
  static ChannelModel awgn(double snr) { return {AwgnBpsk{snr}, std::nullopt}; }
  static ChannelModel rayleigh(double snr) { return {RayleighBpsk{snr}, std::nullopt}; }
};

/// Standard normal upper tail.
inline double q_function(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

inline double ber(const ChannelModel& model) {
  model.validate();
  return std::visit(
      [](const auto& m) -> double {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, FixedBer>) {
          return m.p;
        } else if constexpr (std::is_same_v<M, AwgnBpsk>) {
          return q_function(std::sqrt(2.0 * m.snr));
        } else {
          return 0.5 * (1.0 - std::sqrt(m.mean_snr / (1.0 + m.mean_snr)));
        }
      },
      model.kind);
}

struct Transmission {
  BitStream bits;
  std::size_t flip_count = 0;
};

/// Flips each bit independently with probability ber(model). One uniform is
/// drawn per bit regardless of p, so flip patterns are nested across rates.
inline Transmission transmit(const BitStream& bits, const ChannelModel& model, Rng& stream) {
  const double p = ber(model);
  Transmission out{bits, 0};
  const std::size_t n = bits.bit_length();
  for (std::size_t i = 0; i < n; ++i) {
    if (stream.uniform() < p) {
      out.bits.flip(i);
      ++out.flip_count;
    }
  }
  return out;
}

/// quantize -> transmit -> dequantize; flip count reported through `flips`.
inline Latent send_latent(const Latent& latent, const QuantizationSpec& qspec,
                          const ChannelModel& model, Rng& stream, std::size_t* flips = nullptr) {
  auto sent = transmit(quantize(latent, qspec), model, stream);
  if (flips) *flips = sent.flip_count;
  return dequantize(sent.bits, qspec, {latent.width, latent.height, latent.step});
}

/// Adapts a channel into a split_sample link. The stream is owned by the link.
inline HandoffLink make_link(QuantizationSpec qspec, ChannelModel model, Rng stream) {
  return [qspec, model, stream](const Latent& x) mutable {
    return send_latent(x, qspec, model, stream);
  };
}

}  // namespace cdiff
