#include <gtest/gtest.h>

#include <cmath>

#include "cdiff/channel.hpp"
#include "oracles.hpp"

using namespace cdiff;

TEST(Quantize, EndpointsMidpointClamp) {
  QuantizationSpec q;
  EXPECT_EQ(quantize_value(-4.0, q), 0u);
  EXPECT_EQ(quantize_value(4.0, q), 255u);
  EXPECT_EQ(quantize_value(0.0, q), 128u);  // 127.5 rounds half up
  EXPECT_EQ(quantize_value(14.0, q), 255u);
  EXPECT_EQ(quantize_value(-100.0, q), 0u);
  EXPECT_EQ(dequantize_value(0, q), -4.0);
  EXPECT_EQ(dequantize_value(255, q), 4.0);
}

TEST(Quantize, RoundTripWithinHalfStepForEveryCode) {
  QuantizationSpec q;
  const double bound = 8.0 / 510.0;
  for (std::uint32_t c = 0; c <= 255; ++c) {
    const double centre = dequantize_value(c, q);
    for (double off : {-0.999, -0.5, 0.0, 0.5, 0.999}) {
      const double v = std::clamp(centre + off * bound, -4.0, 4.0);
      EXPECT_LE(std::abs(dequantize_value(quantize_value(v, q), q) - v), bound + 1e-15);
    }
  }
  QuantizationSpec q4{4, -1.0, 1.0};
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = -1 + 2 * r.uniform();
    EXPECT_LE(std::abs(dequantize_value(quantize_value(v, q4), q4) - v), 2.0 / 30.0 + 1e-15);
  }
}

TEST(Quantize, PackingIsMsbFirst) {
  QuantizationSpec q{4, 0.0, 15.0};
  const std::vector<double> v{1.0, 10.0, 15.0};
  const auto bits = quantize(std::span<const double>(v), q);
  ASSERT_EQ(bits.bytes.size(), 2u);
  EXPECT_EQ(bits.bytes[0], 0x1A);
  EXPECT_EQ(bits.bytes[1], 0xF0);
  EXPECT_EQ(bits.bit_length(), 12u);
  EXPECT_EQ(unpack_codes(bits), (std::vector<std::uint32_t>{1, 10, 15}));
}

TEST(Quantize, LatentRoundTrip) {
  QuantizationSpec q;
  Rng r(4);
  std::vector<double> d(256);
  for (auto& v : d) v = 2.0 * r.normal();
  Latent x(d, 16, 16, 6);
  const auto y = dequantize(quantize(x, q), q, {16, 16, 6});
  EXPECT_EQ(y.step, 6);
  for (int i = 0; i < 256; ++i) EXPECT_LE(std::abs(y.data[i] - std::clamp(d[i], -4.0, 4.0)), 8.0 / 510.0 + 1e-15);
  EXPECT_THROW(dequantize(quantize(x, q), q, {8, 8, 6}), Error);
  EXPECT_THROW(dequantize(quantize(x, q), QuantizationSpec{6, -4, 4}, {16, 16, 6}), Error);
  EXPECT_THROW(quantize(x, QuantizationSpec{0, -4, 4}), Error);
  EXPECT_THROW(quantize(x, QuantizationSpec{8, 4, -4}), Error);
}

TEST(WireFormat, RoundTripAndHeader) {
  QuantizationSpec q;
  std::vector<double> d(256, 0.3);
  const auto bits = quantize(std::span<const double>(d), q);
  const auto wire = serialize(bits);
  EXPECT_EQ(wire.size(), 21u + 256u);
  EXPECT_EQ(wire[0], 0x00);  // 256 little-endian
  EXPECT_EQ(wire[1], 0x01);
  EXPECT_EQ(wire[4], 8);
  EXPECT_EQ(deserialize_bitstream(wire), bits);
  EXPECT_EQ(payload_bits(256, q), 2048u + 168u);
}

TEST(WireFormat, CorruptHeaderIsIntegrityError) {
  std::vector<double> d(10, 0.3);
  auto wire = serialize(quantize(std::span<const double>(d), QuantizationSpec{}));
  auto expect_integrity = [](std::vector<std::uint8_t> w) {
    try {
      deserialize_bitstream(w);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::integrity);
    }
  };
  auto truncated = wire;
  truncated.pop_back();
  expect_integrity(truncated);
  auto badbits = wire;
  badbits[4] = 0;
  expect_integrity(badbits);
  auto badcount = wire;
  badcount[0] = 11;
  expect_integrity(badcount);
  expect_integrity(std::vector<std::uint8_t>(5, 0));
}

TEST(Ber, ClosedFormsAndOracle) {
  EXPECT_EQ(ber(ChannelModel::fixed(0.02)), 0.02);
  EXPECT_NEAR(ber(ChannelModel::awgn(1.0)), oracle::q_tail(std::sqrt(2.0)), 1e-10);
  EXPECT_NEAR(ber(ChannelModel::awgn(1.0)), 0.0786, 1e-4);
  EXPECT_LT(ber(ChannelModel::awgn(1e6)), 1e-300);
  EXPECT_NEAR(ber(ChannelModel::rayleigh(1.0)), 0.5 * (1 - std::sqrt(0.5)), 1e-15);
  EXPECT_GT(ber(ChannelModel::rayleigh(3.0)), ber(ChannelModel::awgn(3.0)));
  EXPECT_THROW(ber(ChannelModel::fixed(1.5)), Error);
  EXPECT_THROW(ber(ChannelModel::awgn(0.0)), Error);
  EXPECT_THROW(ber(ChannelModel::rayleigh(-1.0)), Error);
}

TEST(Ber, RayleighMatchesIntegratedAwgnOverExponentialSnr) {
  const double mean = 2.5;
  // average the AWGN error over exponential snr; g = u^2 removes the kink at 0
  auto q = [](double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); };
  const double avg = oracle::simpson(
      [&](double u) { return q(std::sqrt(2.0) * u) * std::exp(-u * u / mean) / mean * 2 * u; }, 0.0, 12.0, 4000);
  EXPECT_NEAR(ber(ChannelModel::rayleigh(mean)), avg, 1e-6);
}

TEST(Transmit, ExtremesAndCounts) {
  std::vector<double> d(1000, 0.7);
  const auto bits = quantize(std::span<const double>(d), QuantizationSpec{});
  Rng r(1);
  auto none = transmit(bits, ChannelModel::fixed(0.0), r);
  EXPECT_EQ(none.bits, bits);
  EXPECT_EQ(none.flip_count, 0u);
  auto all = transmit(bits, ChannelModel::fixed(1.0), r);
  EXPECT_EQ(all.flip_count, bits.bit_length());
  EXPECT_EQ(hamming_distance(all.bits, bits), bits.bit_length());
  for (std::size_t i = 0; i < all.bits.bytes.size(); ++i) EXPECT_EQ(all.bits.bytes[i], static_cast<std::uint8_t>(~bits.bytes[i]));
}

TEST(Transmit, FlipRateWithinFourSigma) {
  std::vector<double> d(125000, 0.0);
  const auto bits = quantize(std::span<const double>(d), QuantizationSpec{});
  ASSERT_EQ(bits.bit_length(), 1000000u);
  Rng r(2023);
  const auto out = transmit(bits, ChannelModel::fixed(0.02), r);
  const double sd = std::sqrt(1e6 * 0.02 * 0.98);
  EXPECT_NEAR(static_cast<double>(out.flip_count), 20000.0, 4 * sd);
  EXPECT_EQ(hamming_distance(out.bits, bits), out.flip_count);
}

TEST(Transmit, FlipPatternsNestAcrossRates) {
  std::vector<double> d(500, 0.1);
  const auto bits = quantize(std::span<const double>(d), QuantizationSpec{});
  Rng a(5), b(5);
  const auto lo = transmit(bits, ChannelModel::fixed(0.01), a);
  const auto hi = transmit(bits, ChannelModel::fixed(0.05), b);
  for (std::size_t i = 0; i < bits.bit_length(); ++i)
    if (lo.bits.bit(i) != bits.bit(i)) {
      EXPECT_NE(hi.bits.bit(i), bits.bit(i));
    }
}

TEST(Link, LosslessLinkIsQuantizationOnly) {
  QuantizationSpec q;
  Latent x({0.12, -1.3, 3.9, 0.0}, 2, 2, 6);
  auto link = make_link(q, ChannelModel::fixed(0.0), Rng(1));
  EXPECT_EQ(link(x), dequantize(quantize(x, q), q, {2, 2, 6}));
  std::size_t flips = 99;
  Rng r(3);
  send_latent(x, q, ChannelModel::fixed(0.0), r, &flips);
  EXPECT_EQ(flips, 0u);
}

TEST(ChannelModel, SnrAccessors) {
  auto m = ChannelModel::awgn(3.0);
  EXPECT_EQ(m.snr().value(), 3.0);
  m.set_snr(0.5);
  EXPECT_EQ(m.snr().value(), 0.5);
  EXPECT_FALSE(ChannelModel::fixed(0.1).snr().has_value());
  EXPECT_EQ(ChannelModel::rayleigh(1).name(), "rayleigh");
}
