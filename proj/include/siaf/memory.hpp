// SPDX-License-Identifier: Apache-2.0
//
// Counted SRAM banks, off-chip traffic and a linear energy model.
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "siaf/error.hpp"

namespace siaf {

/// Capacity-checked bank. Addresses and counts are in words of `word_bits`.
/// Data is kept only for banks that are actually written with payloads
/// (temp partial sums, membranes); pure traffic uses count_read/count_write.
class SramBank {
 public:
  SramBank() = default;
  SramBank(std::string name, std::uint64_t capacity_bytes, std::uint32_t word_bits)
      : name_(std::move(name)), capacity_bytes_(capacity_bytes), word_bits_(word_bits) {
    if (word_bits_ == 0 || word_bits_ > 64 || (capacity_bytes_ * 8) % word_bits_ != 0) {
      throw ConfigError("bank " + name_ + ": word size must divide capacity and be 1..64 bits");
    }
  }

  const std::string& name() const noexcept { return name_; }
  std::uint64_t capacity_bytes() const noexcept { return capacity_bytes_; }
  std::uint32_t word_bits() const noexcept { return word_bits_; }
  std::uint64_t capacity_words() const noexcept { return word_bits_ ? capacity_bytes_ * 8 / word_bits_ : 0; }
  std::uint64_t reads() const noexcept { return reads_; }
  std::uint64_t writes() const noexcept { return writes_; }

  void count_read(std::uint64_t addr, std::uint64_t words) {
    check(addr, words, "read");
    reads_ += words;
  }
  void count_write(std::uint64_t addr, std::uint64_t words) {
    check(addr, words, "write");
    writes_ += words;
  }

  void write(std::uint64_t addr, std::span<const std::uint64_t> data) {
    count_write(addr, data.size());
    ensure_storage();
    for (std::size_t i = 0; i < data.size(); ++i) {
      storage_[addr + i] = data[i] & mask();
      written_[addr + i] = true;
    }
  }

  void read(std::uint64_t addr, std::span<std::uint64_t> out) {
    count_read(addr, out.size());
    ensure_storage();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = storage_[addr + i];
  }

  /// True when every word in [addr, addr + words) holds written data.
  bool is_written(std::uint64_t addr, std::uint64_t words) const {
    if (written_.empty()) return false;
    for (std::uint64_t i = 0; i < words; ++i) {
      if (addr + i >= written_.size() || !written_[addr + i]) return false;
    }
    return true;
  }

  /// Drops validity of a range without counting an access.
  void release(std::uint64_t addr, std::uint64_t words) {
    for (std::uint64_t i = 0; i < words && addr + i < written_.size(); ++i) written_[addr + i] = false;
  }

  /// Resizes the bank; only legal before any access.
  void resize(std::uint64_t capacity_bytes) {
    if (reads_ || writes_) throw ConfigError("bank " + name_ + " resized after use");
    capacity_bytes_ = capacity_bytes;
    storage_.clear();
    written_.clear();
  }

 private:
  void check(std::uint64_t addr, std::uint64_t words, const char* op) const {
    if (addr + words > capacity_words() || addr + words < addr) {
      throw CapacityError("bank " + name_ + ": " + op + " of " + std::to_string(words) + " words at " +
                          std::to_string(addr) + " exceeds capacity of " + std::to_string(capacity_words()) + " words");
    }
  }
  void ensure_storage() {
    if (storage_.empty() && capacity_words() > 0) {
      storage_.assign(capacity_words(), 0);
      written_.assign(capacity_words(), false);
    }
  }
  std::uint64_t mask() const { return word_bits_ == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << word_bits_) - 1; }

  std::string name_;
  std::uint64_t capacity_bytes_ = 0;
  std::uint32_t word_bits_ = 8;
  std::uint64_t reads_ = 0;
  std::uint64_t writes_ = 0;
  std::vector<std::uint64_t> storage_;
  std::vector<bool> written_;
};

struct BankTraffic {
  std::uint64_t reads = 0;
  std::uint64_t writes = 0;
  std::uint64_t read_bytes = 0;
  std::uint64_t write_bytes = 0;
  std::uint64_t capacity_bytes = 0;
  std::uint32_t word_bits = 0;
};

struct TrafficReport {
  std::map<std::string, BankTraffic> banks;
  std::uint64_t offchip_read_bytes = 0;
  std::uint64_t offchip_write_bytes = 0;

  std::uint64_t total_reads() const {
    std::uint64_t n = 0;
    for (const auto& [_, b] : banks) n += b.reads;
    return n;
  }
  std::uint64_t total_writes() const {
    std::uint64_t n = 0;
    for (const auto& [_, b] : banks) n += b.writes;
    return n;
  }
  std::uint64_t total_sram_bytes() const {
    std::uint64_t n = 0;
    for (const auto& [_, b] : banks) n += b.read_bytes + b.write_bytes;
    return n;
  }
};

/// On-chip banks of the accelerator plus an off-chip byte counter.
struct BankSet {
  SramBank weight;
  SramBank spike_in;
  SramBank temp;
  SramBank spike_temp;
  SramBank membrane;  // serial baseline only; outside the on-chip budget
  std::uint64_t offchip_read_bytes = 0;
  std::uint64_t offchip_write_bytes = 0;

  /// Capacity of the four on-chip banks (the membrane bank is excluded).
  std::uint64_t budget_bytes() const {
    return weight.capacity_bytes() + spike_in.capacity_bytes() + temp.capacity_bytes() + spike_temp.capacity_bytes();
  }

  template <class F>
  void for_each(F&& f) const {
    for (const SramBank* b : {&weight, &spike_in, &temp, &spike_temp, &membrane}) f(*b);
  }

  TrafficReport traffic() const {
    TrafficReport r;
    for_each([&](const SramBank& b) {
      BankTraffic t;
      t.reads = b.reads();
      t.writes = b.writes();
      t.read_bytes = b.reads() * b.word_bits() / 8;
      t.write_bytes = b.writes() * b.word_bits() / 8;
      t.capacity_bytes = b.capacity_bytes();
      t.word_bits = b.word_bits();
      r.banks[b.name()] = t;
    });
    r.offchip_read_bytes = offchip_read_bytes;
    r.offchip_write_bytes = offchip_write_bytes;
    return r;
  }
};

struct BudgetConfig {
  std::uint64_t weight_bytes = 64 * 1024;
  std::uint64_t spike_in_bytes = 32 * 1024;
  std::uint64_t temp_bytes = 32 * 1024;
  std::uint64_t spike_temp_bytes = 11 * 1024 + 256;
};

/// Default partition of the 139.25 KB on-chip SRAM. The membrane bank starts
/// empty; the serial schedule sizes it per layer.
inline BankSet default_budget(const BudgetConfig& b = {}) {
  BankSet s;
  s.weight = SramBank("weight", b.weight_bytes, 8);
  s.spike_in = SramBank("spike_in", b.spike_in_bytes, 8);
  s.temp = SramBank("temp", b.temp_bytes, 32);
  s.spike_temp = SramBank("spike_temp", b.spike_temp_bytes, 8);
  s.membrane = SramBank("membrane", 0, 32);
  return s;
}

/// Bytes of 32-bit membrane state a time-step-serial schedule keeps for a
/// layer with `neurons` outputs.
inline std::uint64_t membrane_bytes_for(std::uint64_t neurons) { return 4 * neurons; }

struct AccessEnergy {
  double read_pj = 0.0;
  double write_pj = 0.0;
};

/// Per-access energies (pJ). Placeholders for relative comparison only.
struct EnergyModel {
  std::map<std::string, AccessEnergy> banks;
  double spike_op_pj = 0.05;
  double offchip_word_pj = 100.0;
  std::uint32_t offchip_word_bits = 64;

  void validate() const {
    for (const auto& [name, e] : banks) {
      if (e.read_pj < 0 || e.write_pj < 0) throw ConfigError("negative energy coefficient for bank " + name);
    }
    if (spike_op_pj < 0 || offchip_word_pj < 0) throw ConfigError("negative energy coefficient");
    if (offchip_word_bits == 0) throw ConfigError("offchip word size must be positive");
  }
};

/// 1.0 / 1.2 pJ per 64-bit word read / write, scaled by each bank's word size.
inline EnergyModel default_energy_model(const BankSet& banks, double read_pj_per_64b = 1.0, double write_pj_per_64b = 1.2) {
  EnergyModel m;
  banks.for_each([&](const SramBank& b) {
    const double f = static_cast<double>(b.word_bits()) / 64.0;
    m.banks[b.name()] = AccessEnergy{read_pj_per_64b * f, write_pj_per_64b * f};
  });
  return m;
}

struct EnergyReport {
  double memory_pj = 0.0;
  double offchip_pj = 0.0;
  double logic_pj = 0.0;
  double total_pj = 0.0;
  double memory_fraction = 0.0;  // on-chip SRAM share of (SRAM + logic)
  std::map<std::string, double> per_bank_pj;
};

/// Linear in every counter.
inline EnergyReport energy_report(const TrafficReport& traffic, std::uint64_t spike_ops, const EnergyModel& model) {
  model.validate();
  EnergyReport r;
  for (const auto& [name, t] : traffic.banks) {
    auto it = model.banks.find(name);
    const AccessEnergy e = it == model.banks.end() ? AccessEnergy{} : it->second;
    const double pj = static_cast<double>(t.reads) * e.read_pj + static_cast<double>(t.writes) * e.write_pj;
    r.per_bank_pj[name] = pj;
    r.memory_pj += pj;
  }
  const double offchip_words =
      static_cast<double>(traffic.offchip_read_bytes + traffic.offchip_write_bytes) * 8.0 / model.offchip_word_bits;
  r.offchip_pj = offchip_words * model.offchip_word_pj;
  r.logic_pj = static_cast<double>(spike_ops) * model.spike_op_pj;
  r.total_pj = r.memory_pj + r.offchip_pj + r.logic_pj;
  const double chip = r.memory_pj + r.logic_pj;
  r.memory_fraction = chip > 0 ? r.memory_pj / chip : 0.0;
  return r;
}

}  // namespace siaf
