#pragma once

#include "tcq/trellis.hpp"

namespace tcq {

// Bit-packed stream. Symbols are written most-significant bit first, in
// temporal order, with no padding between symbols; the final byte is
// zero-filled.
struct BitStream {
  std::vector<std::uint8_t> bytes;
  std::size_t n_bits = 0;

  bool operator==(const BitStream &) const = default;
};

class BitWriter {
public:
  void put(std::uint32_t value, unsigned width);
  BitStream finish() &&;
  std::size_t bits_written() const { return stream_.n_bits; }

private:
  BitStream stream_;
};

class BitReader {
public:
  explicit BitReader(const BitStream &stream) : stream_(stream) {}
  std::uint32_t get(unsigned width);
  std::size_t remaining() const { return stream_.n_bits - pos_; }

private:
  const BitStream &stream_;
  std::size_t pos_ = 0;
};

struct HardPath {
  std::vector<std::uint32_t> states; // s_1 .. s_L (s_0 is the pinned start)
  BitStream bits;                    // L * k transition bits
  std::vector<double> codeword;      // c(s_t)
  double distortion = 0.0;           // 1/2 ||w - codeword||^2
};

// Per-site quadratic cost 1/2 (w - c)^2. Viterbi and every oracle that
// compares distortions accumulate this term left to right.
inline double site_cost(double w, double c) {
  const double d = w - c;
  return 0.5 * (d * d);
}

// Minimum-distortion legal path. Ties go to the lower-numbered predecessor
// state, then to the lower-numbered final state.
HardPath viterbi_encode(std::span<const double> w, const TrellisConfig &config);

std::vector<HardPath> viterbi_encode_batch(std::span<const double> blocks,
                                           const TrellisConfig &config,
                                           unsigned workers = 1);

// Replays L*k bits from the start state and emits c(s_t).
std::vector<double> decode(const BitStream &bits, const TrellisConfig &config);
std::vector<std::uint32_t> decode_states(const BitStream &bits,
                                         const TrellisConfig &config);

// Distortion gap between the second-best and the best legal path (0 when
// the optimum is not unique).
double viterbi_margin(std::span<const double> w, const TrellisConfig &config);

} // namespace tcq
