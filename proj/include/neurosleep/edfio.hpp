#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "neurosleep/prep.hpp"

namespace nsn::edf {

struct SignalHeader {
    std::string label;
    std::string transducer;
    std::string physical_dimension;
    double phys_min = 0.0, phys_max = 0.0;
    int dig_min = 0, dig_max = 0;
    std::string prefiltering;
    std::size_t samples_per_record = 0;
};

struct EdfHeader {
    std::string version;
    std::string patient;
    std::string recording_id;
    std::string start_date;
    std::string start_time;
    std::size_t header_bytes = 0;
    std::int64_t num_records = 0;
    double record_duration_seconds = 0.0;
    std::size_t num_signals = 0;
    std::vector<SignalHeader> signals;
};

// Parses the 256-byte fixed header plus the per-signal header block.
EdfHeader parse_header(const std::vector<std::uint8_t>& bytes);

// 16-bit little-endian digital samples converted to physical units.
// Returns (samples, fs).
std::pair<std::vector<double>, double> read_signal(const std::vector<std::uint8_t>& file,
                                                   const EdfHeader& header,
                                                   std::size_t signal_index);

struct TalAnnotation {
    double onset_seconds = 0.0;
    std::optional<double> duration_seconds;
    std::string label;
};

// Parses one EDF+ TAL byte stream (as stored in an "EDF Annotations"
// signal). Timekeeping TALs and empty labels are skipped.
std::vector<TalAnnotation> parse_annotations(const std::vector<std::uint8_t>& tal_bytes);

// Extracts and parses every record of the "EDF Annotations" signal.
std::vector<TalAnnotation> read_annotations(const std::vector<std::uint8_t>& file,
                                            const EdfHeader& header);

// Loads the data channels of a PSG EDF plus the hypnogram of a separate
// EDF+ annotation file (Sleep-EDFx layout). channel filter empty = all.
Recording load_recording(const std::string& psg_path, const std::string& hypnogram_path,
                         const std::vector<std::string>& channel_filter,
                         const std::string& subject_id);

std::vector<std::uint8_t> read_file(const std::string& path);

// NSE1 epoch store, little-endian, bit-exact round trip.
std::vector<std::uint8_t> write_epoch_store(const std::vector<EpochRecord>& epochs);
std::vector<EpochRecord> read_epoch_store(const std::vector<std::uint8_t>& bytes);

void save_epoch_store(const std::string& path, const std::vector<EpochRecord>& epochs);
std::vector<EpochRecord> load_epoch_store(const std::string& path);

}  // namespace nsn::edf
