#include "tcq/viterbi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tcq {

void BitWriter::put(std::uint32_t value, unsigned width) {
  for (unsigned i = width; i-- > 0;) {
    const std::size_t pos = stream_.n_bits++;
    if (pos % 8 == 0)
      stream_.bytes.push_back(0);
    if ((value >> i) & 1u)
      stream_.bytes.back() |= static_cast<std::uint8_t>(0x80u >> (pos % 8));
  }
}

BitStream BitWriter::finish() && { return std::move(stream_); }

std::uint32_t BitReader::get(unsigned width) {
  if (width > remaining())
    throw FormatError("bitstream exhausted");
  std::uint32_t v = 0;
  for (unsigned i = 0; i < width; ++i, ++pos_) {
    const unsigned bit = (stream_.bytes[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
    v = (v << 1) | bit;
  }
  return v;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_block(std::span<const double> w, const TrellisConfig &config) {
  if (w.size() != config.L())
    throw DimensionError("block length " + std::to_string(w.size()) +
                         " != L = " + std::to_string(config.L()));
}

// Min-sum forward pass; returns cost[t][s] for t = 1..L (row t-1) and the
// chosen predecessor slot.
void forward_min_sum(std::span<const double> w, const TrellisConfig &config,
                     std::vector<double> &cost,
                     std::vector<std::uint16_t> *back) {
  const auto &tab = config.tables();
  const auto c = config.emission();
  const std::size_t S = tab.S, L = w.size(), np = tab.n_pred;
  cost.assign(L * S, kInf);
  if (back)
    back->assign(L * S, 0);

  std::vector<double> prev(S, kInf);
  prev[TrellisConfig::kInitialState] = 0.0;
  for (std::size_t t = 0; t < L; ++t) {
    double *cur = cost.data() + t * S;
    for (std::size_t s = 0; s < S; ++s) {
      double best = kInf;
      std::uint16_t arg = 0;
      const std::uint32_t *ps = tab.pred_state.data() + s * np;
      for (std::size_t j = 0; j < np; ++j)
        if (prev[ps[j]] < best) {
          best = prev[ps[j]];
          arg = static_cast<std::uint16_t>(j);
        }
      cur[s] = best + site_cost(w[t], c[s]);
      if (back)
        (*back)[t * S + s] = arg;
    }
    std::copy(cur, cur + S, prev.begin());
  }
}

} // namespace

HardPath viterbi_encode(std::span<const double> w, const TrellisConfig &config) {
  check_block(w, config);
  const auto &tab = config.tables();
  const std::size_t S = tab.S, L = w.size(), np = tab.n_pred;

  std::vector<double> cost;
  std::vector<std::uint16_t> back;
  forward_min_sum(w, config, cost, &back);

  const double *last = cost.data() + (L - 1) * S;
  std::size_t s = static_cast<std::size_t>(std::min_element(last, last + S) - last);

  HardPath path;
  path.states.resize(L);
  std::vector<std::uint32_t> bits(L);
  for (std::size_t t = L; t-- > 0;) {
    path.states[t] = static_cast<std::uint32_t>(s);
    const std::size_t j = back[t * S + s];
    bits[t] = tab.pred_bits[s * np + j];
    s = tab.pred_state[s * np + j];
  }

  BitWriter writer;
  for (auto b : bits)
    writer.put(b, config.k());
  path.bits = std::move(writer).finish();

  path.codeword.resize(L);
  const auto c = config.emission();
  for (std::size_t t = 0; t < L; ++t) {
    path.codeword[t] = c[path.states[t]];
    path.distortion += site_cost(w[t], path.codeword[t]);
  }
  return path;
}

std::vector<HardPath> viterbi_encode_batch(std::span<const double> blocks,
                                           const TrellisConfig &config,
                                           unsigned workers) {
  const std::size_t L = config.L();
  if (blocks.size() % L != 0)
    throw DimensionError("viterbi_encode_batch: size is not a multiple of L");
  std::vector<HardPath> out(blocks.size() / L);
  parallel_for(out.size(), workers, [&](std::size_t b) {
    out[b] = viterbi_encode(blocks.subspan(b * L, L), config);
  });
  return out;
}

std::vector<std::uint32_t> decode_states(const BitStream &bits,
                                         const TrellisConfig &config) {
  if (bits.n_bits != config.L() * config.k() ||
      bits.bytes.size() != (bits.n_bits + 7) / 8)
    throw FormatError("bitstream length " + std::to_string(bits.n_bits) +
                      " != L*k = " + std::to_string(config.L() * config.k()));
  BitReader reader(bits);
  std::vector<std::uint32_t> states(config.L());
  std::uint32_t s = TrellisConfig::kInitialState;
  for (auto &st : states) {
    s = config.tables().next(s, reader.get(config.k()));
    st = s;
  }
  return states;
}

std::vector<double> decode(const BitStream &bits, const TrellisConfig &config) {
  const auto states = decode_states(bits, config);
  std::vector<double> out(states.size());
  const auto c = config.emission();
  for (std::size_t t = 0; t < states.size(); ++t)
    out[t] = c[states[t]];
  return out;
}

double viterbi_margin(std::span<const double> w, const TrellisConfig &config) {
  check_block(w, config);
  const auto &tab = config.tables();
  const auto c = config.emission();
  const std::size_t S = tab.S, L = w.size();

  std::vector<double> fwd;
  forward_min_sum(w, config, fwd, nullptr);

  // bwd[t][s]: cheapest completion of sites t+1..L from state s at site t.
  std::vector<double> bwd(L * S, 0.0);
  for (std::size_t t = L - 1; t-- > 0;)
    for (std::size_t s = 0; s < S; ++s) {
      double best = kInf;
      for (std::size_t b = 0; b < tab.n_succ; ++b) {
        const auto n = tab.next(s, b);
        best = std::min(best, site_cost(w[t + 1], c[n]) + bwd[(t + 1) * S + n]);
      }
      bwd[t * S + s] = best;
    }

  const HardPath best = viterbi_encode(w, config);
  const double best_cost = *std::min_element(fwd.end() - S, fwd.end());
  double second = kInf;
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t s = 0; s < S; ++s)
      if (s != best.states[t])
        second = std::min(second, fwd[t * S + s] + bwd[t * S + s]);
  return std::max(0.0, second - best_cost);
}

} // namespace tcq
