#include "neurosleep/edfio.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nsn::edf {

namespace {

std::string field(const std::vector<std::uint8_t>& b, std::size_t off, std::size_t len) {
    if (off + len > b.size())
        throw std::invalid_argument("edf: truncated header at byte offset " +
                                    std::to_string(off));
    std::string s(reinterpret_cast<const char*>(b.data() + off), len);
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
}

double num_field(const std::vector<std::uint8_t>& b, std::size_t off, std::size_t len) {
    const std::string s = field(b, off, len);
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("edf: non-numeric field '" + s + "' at byte offset " +
                                    std::to_string(off));
    }
}

std::int64_t int_field(const std::vector<std::uint8_t>& b, std::size_t off, std::size_t len) {
    const double v = num_field(b, off, len);
    const auto i = std::int64_t(v);
    if (double(i) != v)
        throw std::invalid_argument("edf: expected integer at byte offset " +
                                    std::to_string(off));
    return i;
}

}  // namespace

EdfHeader parse_header(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 256)
        throw std::invalid_argument("edf: file has only " + std::to_string(bytes.size()) +
                                    " bytes, header needs at least 256");
    EdfHeader h;
    h.version = field(bytes, 0, 8);
    h.patient = field(bytes, 8, 80);
    h.recording_id = field(bytes, 88, 80);
    h.start_date = field(bytes, 168, 8);
    h.start_time = field(bytes, 176, 8);
    h.header_bytes = std::size_t(int_field(bytes, 184, 8));
    h.num_records = int_field(bytes, 236, 8);
    h.record_duration_seconds = num_field(bytes, 244, 8);
    h.num_signals = std::size_t(int_field(bytes, 252, 4));

    if (h.header_bytes != 256 * (h.num_signals + 1))
        throw std::invalid_argument("edf: header_bytes field at offset 184 is " +
                                    std::to_string(h.header_bytes) + ", expected " +
                                    std::to_string(256 * (h.num_signals + 1)));
    if (bytes.size() < h.header_bytes)
        throw std::invalid_argument("edf: file shorter than declared header");

    const std::size_t ns = h.num_signals;
    std::size_t off = 256;
    h.signals.resize(ns);
    for (std::size_t s = 0; s < ns; ++s) h.signals[s].label = field(bytes, off + 16 * s, 16);
    off += 16 * ns;
    for (std::size_t s = 0; s < ns; ++s) h.signals[s].transducer = field(bytes, off + 80 * s, 80);
    off += 80 * ns;
    for (std::size_t s = 0; s < ns; ++s)
        h.signals[s].physical_dimension = field(bytes, off + 8 * s, 8);
    off += 8 * ns;
    for (std::size_t s = 0; s < ns; ++s) h.signals[s].phys_min = num_field(bytes, off + 8 * s, 8);
    off += 8 * ns;
    for (std::size_t s = 0; s < ns; ++s) h.signals[s].phys_max = num_field(bytes, off + 8 * s, 8);
    off += 8 * ns;
    for (std::size_t s = 0; s < ns; ++s)
        h.signals[s].dig_min = int(int_field(bytes, off + 8 * s, 8));
    off += 8 * ns;
    for (std::size_t s = 0; s < ns; ++s)
        h.signals[s].dig_max = int(int_field(bytes, off + 8 * s, 8));
    off += 8 * ns;
    for (std::size_t s = 0; s < ns; ++s)
        h.signals[s].prefiltering = field(bytes, off + 80 * s, 80);
    off += 80 * ns;
    for (std::size_t s = 0; s < ns; ++s)
        h.signals[s].samples_per_record = std::size_t(int_field(bytes, off + 8 * s, 8));

    for (std::size_t s = 0; s < ns; ++s) {
        const auto& sig = h.signals[s];
        if (sig.dig_max <= sig.dig_min)
            throw std::invalid_argument("edf: signal " + std::to_string(s) +
                                        ": dig_max must exceed dig_min");
        if (sig.phys_max == sig.phys_min)
            throw std::invalid_argument("edf: signal " + std::to_string(s) +
                                        ": phys_max equals phys_min");
    }
    return h;
}

std::pair<std::vector<double>, double> read_signal(const std::vector<std::uint8_t>& file,
                                                   const EdfHeader& h,
                                                   std::size_t signal_index) {
    if (signal_index >= h.num_signals)
        throw std::invalid_argument("edf: signal index out of range");
    std::size_t record_samples = 0;  // total int16 per record across all signals
    std::size_t sig_offset = 0;
    for (std::size_t s = 0; s < h.num_signals; ++s) {
        if (s == signal_index) sig_offset = record_samples;
        record_samples += h.signals[s].samples_per_record;
    }
    const auto& sig = h.signals[signal_index];
    const std::size_t spr = sig.samples_per_record;
    const std::size_t nrec = std::size_t(h.num_records);

    std::vector<double> out;
    out.reserve(spr * nrec);
    const double scale = (sig.phys_max - sig.phys_min) / double(sig.dig_max - sig.dig_min);
    for (std::size_t r = 0; r < nrec; ++r) {
        const std::size_t base = h.header_bytes + 2 * (r * record_samples + sig_offset);
        if (base + 2 * spr > file.size())
            throw std::invalid_argument("edf: truncated data record " + std::to_string(r));
        for (std::size_t i = 0; i < spr; ++i) {
            std::int16_t d;
            std::memcpy(&d, file.data() + base + 2 * i, 2);
            out.push_back((double(d) - double(sig.dig_min)) * scale + sig.phys_min);
        }
    }
    const double fs = double(spr) / h.record_duration_seconds;
    return {std::move(out), fs};
}

std::vector<TalAnnotation> parse_annotations(const std::vector<std::uint8_t>& b) {
    std::vector<TalAnnotation> out;
    std::size_t i = 0;
    const auto fail = [](std::size_t off, const std::string& what) {
        throw std::invalid_argument("edf+: malformed TAL at byte offset " + std::to_string(off) +
                                    ": " + what);
    };
    while (i < b.size()) {
        if (b[i] == 0) {  // padding
            ++i;
            continue;
        }
        if (b[i] != '+' && b[i] != '-') fail(i, "onset must start with + or -");
        const std::size_t onset_start = i;
        ++i;
        while (i < b.size() && b[i] != 0x14 && b[i] != 0x15) ++i;
        if (i >= b.size()) fail(onset_start, "unterminated onset");
        double onset = 0.0;
        try {
            onset = std::stod(std::string(reinterpret_cast<const char*>(b.data()) + onset_start,
                                          i - onset_start));
        } catch (const std::exception&) {
            fail(onset_start, "non-numeric onset");
        }
        std::optional<double> duration;
        if (b[i] == 0x15) {
            const std::size_t dur_start = ++i;
            while (i < b.size() && b[i] != 0x14) ++i;
            if (i >= b.size()) fail(dur_start, "unterminated duration");
            try {
                duration = std::stod(std::string(
                    reinterpret_cast<const char*>(b.data()) + dur_start, i - dur_start));
            } catch (const std::exception&) {
                fail(dur_start, "non-numeric duration");
            }
        }
        // One or more 0x14-delimited labels, TAL ends with 0x14 0x00.
        while (i < b.size() && b[i] == 0x14) {
            ++i;
            const std::size_t lab_start = i;
            while (i < b.size() && b[i] != 0x14 && b[i] != 0) ++i;
            if (i >= b.size()) fail(lab_start, "unterminated annotation");
            if (b[i] == 0) {
                // end of TAL; lab_start..i must be empty per the format
                break;
            }
            const std::string label(reinterpret_cast<const char*>(b.data()) + lab_start,
                                    i - lab_start);
            if (!label.empty()) out.push_back({onset, duration, label});
        }
        if (i >= b.size() || b[i] != 0) fail(i < b.size() ? i : b.size() - 1, "missing terminator");
        ++i;
    }
    return out;
}

std::vector<TalAnnotation> read_annotations(const std::vector<std::uint8_t>& file,
                                            const EdfHeader& h) {
    std::size_t ann_index = h.num_signals;
    for (std::size_t s = 0; s < h.num_signals; ++s)
        if (h.signals[s].label == "EDF Annotations") {
            ann_index = s;
            break;
        }
    if (ann_index == h.num_signals)
        throw std::invalid_argument("edf+: no 'EDF Annotations' signal present");

    std::size_t record_samples = 0, sig_offset = 0;
    for (std::size_t s = 0; s < h.num_signals; ++s) {
        if (s == ann_index) sig_offset = record_samples;
        record_samples += h.signals[s].samples_per_record;
    }
    const std::size_t spr = h.signals[ann_index].samples_per_record;

    std::vector<TalAnnotation> out;
    for (std::size_t r = 0; r < std::size_t(h.num_records); ++r) {
        const std::size_t base = h.header_bytes + 2 * (r * record_samples + sig_offset);
        if (base + 2 * spr > file.size())
            throw std::invalid_argument("edf+: truncated annotation record " + std::to_string(r));
        std::vector<std::uint8_t> tal(file.begin() + base, file.begin() + base + 2 * spr);
        auto recs = parse_annotations(tal);
        out.insert(out.end(), recs.begin(), recs.end());
    }
    return out;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                     std::istreambuf_iterator<char>());
}

Recording load_recording(const std::string& psg_path, const std::string& hypnogram_path,
                         const std::vector<std::string>& channel_filter,
                         const std::string& subject_id) {
    const auto psg = read_file(psg_path);
    const auto header = parse_header(psg);
    Recording rec;
    rec.subject_id = subject_id;
    for (std::size_t s = 0; s < header.num_signals; ++s) {
        const auto& label = header.signals[s].label;
        if (label == "EDF Annotations") continue;
        if (!channel_filter.empty() &&
            std::find(channel_filter.begin(), channel_filter.end(), label) ==
                channel_filter.end())
            continue;
        auto [samples, fs] = read_signal(psg, header, s);
        rec.channels.push_back({label, std::move(samples), fs});
    }
    if (rec.channels.empty())
        throw std::runtime_error(psg_path + ": no matching data channels");

    const auto hyp = read_file(hypnogram_path);
    const auto hyp_header = parse_header(hyp);
    for (const auto& tal : read_annotations(hyp, hyp_header))
        rec.annotations.push_back(
            {tal.onset_seconds, tal.duration_seconds.value_or(0.0), tal.label});
    return rec;
}

namespace {

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(v & 0xff);
    b.push_back(v >> 8);
}
void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
void put_f32(std::vector<std::uint8_t>& b, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(b, u);
}

struct Reader {
    const std::vector<std::uint8_t>& b;
    std::size_t pos = 0;
    void need(std::size_t n) const {
        if (pos + n > b.size())
            throw std::invalid_argument("epoch store: truncated at byte " + std::to_string(pos));
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = std::uint16_t(b[pos]) | (std::uint16_t(b[pos + 1]) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return b[pos++];
    }
    float f32() {
        const std::uint32_t u = u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
        pos += n;
        return s;
    }
};

constexpr std::uint16_t kStoreVersion = 1;

}  // namespace

std::vector<std::uint8_t> write_epoch_store(const std::vector<EpochRecord>& epochs) {
    const std::size_t C = epochs.empty() ? 0 : epochs[0].channels;
    const std::size_t T = epochs.empty() ? 0 : epochs[0].width;
    for (const auto& e : epochs)
        if (e.channels != C || e.width != T)
            throw std::invalid_argument("epoch store: mixed epoch shapes");

    std::vector<std::uint8_t> b;
    b.insert(b.end(), {'N', 'S', 'E', '1'});
    put_u16(b, kStoreVersion);
    put_u16(b, std::uint16_t(C));
    put_u32(b, std::uint32_t(T));
    put_u32(b, std::uint32_t(epochs.size()));
    for (const auto& e : epochs) {
        put_u16(b, std::uint16_t(e.subject_id.size()));
        b.insert(b.end(), e.subject_id.begin(), e.subject_id.end());
        put_u32(b, e.epoch_index);
        b.push_back(std::uint8_t(e.label));
        for (double v : e.samples) put_f32(b, float(v));
    }
    return b;
}

std::vector<EpochRecord> read_epoch_store(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    if (r.str(4) != "NSE1") throw std::invalid_argument("epoch store: bad magic");
    const std::uint16_t version = r.u16();
    if (version != kStoreVersion)
        throw std::invalid_argument("epoch store: unsupported version " +
                                    std::to_string(version));
    const std::size_t C = r.u16();
    const std::size_t T = r.u32();
    const std::size_t count = r.u32();
    std::vector<EpochRecord> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        EpochRecord e;
        e.channels = C;
        e.width = T;
        const std::size_t slen = r.u16();
        e.subject_id = r.str(slen);
        e.epoch_index = r.u32();
        e.label = r.u8();
        if (e.label >= kStageCount)
            throw std::invalid_argument("epoch store: invalid label in epoch " +
                                        std::to_string(i));
        e.samples.resize(C * T);
        for (auto& v : e.samples) v = double(r.f32());
        out.push_back(std::move(e));
    }
    if (r.pos != bytes.size())
        throw std::invalid_argument("epoch store: trailing bytes after last epoch");
    return out;
}

void save_epoch_store(const std::string& path, const std::vector<EpochRecord>& epochs) {
    const auto bytes = write_epoch_store(epochs);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

std::vector<EpochRecord> load_epoch_store(const std::string& path) {
    return read_epoch_store(read_file(path));
}

}  // namespace nsn::edf
