#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "neurosleep/edfio.hpp"

using namespace nsn;

namespace {

void put_field(std::vector<std::uint8_t>& b, const std::string& s, std::size_t width) {
    REQUIRE(s.size() <= width);
    for (char c : s) b.push_back(std::uint8_t(c));
    for (std::size_t i = s.size(); i < width; ++i) b.push_back(' ');
}

struct FixtureSignal {
    std::string label;
    std::string dimension = "uV";
    double phys_min = -250.0, phys_max = 250.0;
    int dig_min = -2048, dig_max = 2047;
    std::size_t samples_per_record = 0;
    std::vector<std::int16_t> samples;  // num_records * samples_per_record
};

std::vector<std::uint8_t> serialize_edf(const std::vector<FixtureSignal>& signals,
                                        std::int64_t num_records, double record_duration) {
    std::vector<std::uint8_t> b;
    put_field(b, "0", 8);
    put_field(b, "X X X X", 80);
    put_field(b, "Startdate X X X X", 80);
    put_field(b, "01.01.02", 8);
    put_field(b, "22.10.00", 8);
    put_field(b, std::to_string(256 * (signals.size() + 1)), 8);
    put_field(b, "EDF+C", 44);
    put_field(b, std::to_string(num_records), 8);
    char dur[16];
    std::snprintf(dur, sizeof dur, "%g", record_duration);
    put_field(b, dur, 8);
    put_field(b, std::to_string(signals.size()), 4);

    for (const auto& s : signals) put_field(b, s.label, 16);
    for (std::size_t i = 0; i < signals.size(); ++i) put_field(b, "", 80);
    for (const auto& s : signals) put_field(b, s.dimension, 8);
    for (const auto& s : signals) {
        char f[16];
        std::snprintf(f, sizeof f, "%g", s.phys_min);
        put_field(b, f, 8);
    }
    for (const auto& s : signals) {
        char f[16];
        std::snprintf(f, sizeof f, "%g", s.phys_max);
        put_field(b, f, 8);
    }
    for (const auto& s : signals) put_field(b, std::to_string(s.dig_min), 8);
    for (const auto& s : signals) put_field(b, std::to_string(s.dig_max), 8);
    for (std::size_t i = 0; i < signals.size(); ++i) put_field(b, "", 80);
    for (const auto& s : signals) put_field(b, std::to_string(s.samples_per_record), 8);
    for (std::size_t i = 0; i < signals.size(); ++i) put_field(b, "", 32);

    for (std::int64_t r = 0; r < num_records; ++r)
        for (const auto& s : signals)
            for (std::size_t i = 0; i < s.samples_per_record; ++i) {
                const std::int16_t v = s.samples[std::size_t(r) * s.samples_per_record + i];
                b.push_back(std::uint8_t(v & 0xff));
                b.push_back(std::uint8_t((v >> 8) & 0xff));
            }
    return b;
}

std::vector<std::int16_t> tal_to_samples(const std::string& tal, std::size_t spr) {
    std::vector<std::uint8_t> raw(tal.begin(), tal.end());
    raw.resize(2 * spr, 0);
    std::vector<std::int16_t> out(spr);
    std::memcpy(out.data(), raw.data(), 2 * spr);
    return out;
}

}  // namespace

TEST_CASE("crafted two-signal fixture header parses to known fields") {
    FixtureSignal eeg;
    eeg.label = "EEG Fpz-Cz";
    eeg.samples_per_record = 200;
    eeg.samples.assign(400, 0);
    FixtureSignal ann;
    ann.label = "EDF Annotations";
    ann.dimension = "";
    ann.phys_min = 0.0;
    ann.phys_max = 1.0;
    ann.dig_min = -32768;
    ann.dig_max = 32767;
    ann.samples_per_record = 32;
    ann.samples.assign(64, 0);

    auto bytes = serialize_edf({eeg, ann}, 2, 1.0);
    auto h = edf::parse_header(bytes);
    CHECK(h.version == "0");
    CHECK(h.start_date == "01.01.02");
    CHECK(h.start_time == "22.10.00");
    CHECK(h.header_bytes == 768);
    CHECK(h.num_records == 2);
    CHECK(h.record_duration_seconds == 1.0);
    REQUIRE(h.num_signals == 2);
    CHECK(h.signals[0].label == "EEG Fpz-Cz");
    CHECK(h.signals[0].physical_dimension == "uV");
    CHECK(h.signals[0].phys_min == -250.0);
    CHECK(h.signals[0].dig_max == 2047);
    CHECK(h.signals[0].samples_per_record == 200);
    CHECK(h.signals[1].label == "EDF Annotations");
}

TEST_CASE("header_bytes mismatch is rejected naming offset 184") {
    FixtureSignal eeg;
    eeg.label = "EEG";
    eeg.samples_per_record = 1;
    eeg.samples = {0};
    auto bytes = serialize_edf({eeg}, 1, 1.0);
    // Corrupt the header_bytes field.
    const char* wrong = "999     ";
    std::memcpy(bytes.data() + 184, wrong, 8);
    try {
        edf::parse_header(bytes);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("184") != std::string::npos);
    }
    CHECK_THROWS(edf::parse_header(std::vector<std::uint8_t>{}));
}

TEST_CASE("read_signal endpoint scaling identities and the digital-zero example") {
    FixtureSignal eeg;
    eeg.label = "EEG";
    eeg.samples_per_record = 4;
    eeg.samples = {-2048, 2047, 0, 100};
    auto bytes = serialize_edf({eeg}, 1, 1.0);
    auto h = edf::parse_header(bytes);
    auto [x, fs] = edf::read_signal(bytes, h, 0);
    CHECK(fs == 4.0);
    REQUIRE(x.size() == 4);
    CHECK(x[0] == -250.0);  // dig_min -> phys_min exactly
    CHECK(x[1] == 250.0);   // dig_max -> phys_max exactly
    // phys = phys_min + (dig - dig_min) * (phys_max - phys_min) / (dig_max - dig_min)
    CHECK(x[2] == doctest::Approx(500.0 * 2048.0 / 4095.0 - 250.0).epsilon(1e-12));

    // Truncated data record names the record index.
    bytes.resize(bytes.size() - 2);
    h = edf::parse_header(bytes);
    CHECK_THROWS(edf::read_signal(bytes, h, 0));
}

TEST_CASE("TAL parsing examples") {
    auto empty = edf::parse_annotations({'+', '0', 0x14, 0x14, 0x00});
    CHECK(empty.empty());

    std::string tal = "+30";
    tal += char(0x15);
    tal += "30";
    tal += char(0x14);
    tal += "Sleep stage W";
    tal += char(0x14);
    tal += char(0x00);
    auto got = edf::parse_annotations(std::vector<std::uint8_t>(tal.begin(), tal.end()));
    REQUIRE(got.size() == 1);
    CHECK(got[0].onset_seconds == 30.0);
    REQUIRE(got[0].duration_seconds.has_value());
    CHECK(*got[0].duration_seconds == 30.0);
    CHECK(got[0].label == "Sleep stage W");

    std::string nodur = "+12.5";
    nodur += char(0x14);
    nodur += "Sleep stage R";
    nodur += char(0x14);
    nodur += char(0x00);
    auto nd = edf::parse_annotations(std::vector<std::uint8_t>(nodur.begin(), nodur.end()));
    REQUIRE(nd.size() == 1);
    CHECK(nd[0].onset_seconds == 12.5);
    CHECK(!nd[0].duration_seconds.has_value());

    CHECK_THROWS(edf::parse_annotations({'x', 0x14, 0x00}));
}

TEST_CASE("read_annotations extracts every record of the annotation signal") {
    FixtureSignal ann;
    ann.label = "EDF Annotations";
    ann.dimension = "";
    ann.phys_min = 0.0;
    ann.phys_max = 1.0;
    ann.dig_min = -32768;
    ann.dig_max = 32767;
    ann.samples_per_record = 40;

    std::string r0 = "+0";
    r0 += char(0x14);
    r0 += char(0x14);
    r0 += char(0x00);
    r0 += "+0";
    r0 += char(0x15);
    r0 += "30";
    r0 += char(0x14);
    r0 += "Sleep stage W";
    r0 += char(0x14);
    r0 += char(0x00);
    std::string r1 = "+30";
    r1 += char(0x14);
    r1 += char(0x14);
    r1 += char(0x00);
    r1 += "+30";
    r1 += char(0x15);
    r1 += "60";
    r1 += char(0x14);
    r1 += "Sleep stage 2";
    r1 += char(0x14);
    r1 += char(0x00);

    auto s0 = tal_to_samples(r0, ann.samples_per_record);
    auto s1 = tal_to_samples(r1, ann.samples_per_record);
    ann.samples = s0;
    ann.samples.insert(ann.samples.end(), s1.begin(), s1.end());

    auto bytes = serialize_edf({ann}, 2, 30.0);
    auto h = edf::parse_header(bytes);
    auto tals = edf::read_annotations(bytes, h);
    REQUIRE(tals.size() == 2);
    CHECK(tals[0].label == "Sleep stage W");
    CHECK(tals[1].onset_seconds == 30.0);
    CHECK(*tals[1].duration_seconds == 60.0);
}

TEST_CASE("load_recording joins a PSG file and a hypnogram file") {
    FixtureSignal eeg;
    eeg.label = "EEG Fpz-Cz";
    eeg.samples_per_record = 100;
    eeg.samples.assign(200, 0);
    for (std::size_t i = 0; i < eeg.samples.size(); ++i)
        eeg.samples[i] = std::int16_t((i % 7) * 100);
    auto psg = serialize_edf({eeg}, 2, 1.0);

    FixtureSignal ann;
    ann.label = "EDF Annotations";
    ann.dimension = "";
    ann.phys_min = 0.0;
    ann.phys_max = 1.0;
    ann.dig_min = -32768;
    ann.dig_max = 32767;
    ann.samples_per_record = 30;
    std::string tal = "+0";
    tal += char(0x15);
    tal += "2";
    tal += char(0x14);
    tal += "Sleep stage 1";
    tal += char(0x14);
    tal += char(0x00);
    ann.samples = tal_to_samples(tal, ann.samples_per_record);
    auto hyp = serialize_edf({ann}, 1, 2.0);

    const std::string psg_path = "fixture_psg.edf";
    const std::string hyp_path = "fixture_hyp.edf";
    {
        std::ofstream f(psg_path, std::ios::binary);
        f.write(reinterpret_cast<const char*>(psg.data()), std::streamsize(psg.size()));
        std::ofstream g(hyp_path, std::ios::binary);
        g.write(reinterpret_cast<const char*>(hyp.data()), std::streamsize(hyp.size()));
    }
    auto rec = edf::load_recording(psg_path, hyp_path, {}, "SC4001");
    std::remove(psg_path.c_str());
    std::remove(hyp_path.c_str());

    CHECK(rec.subject_id == "SC4001");
    REQUIRE(rec.channels.size() == 1);
    CHECK(rec.channels[0].fs == 100.0);
    CHECK(rec.channels[0].samples.size() == 200);
    REQUIRE(rec.annotations.size() == 1);
    CHECK(rec.annotations[0].raw_label == "Sleep stage 1");
    CHECK(rec.annotations[0].duration_seconds == 2.0);
}

TEST_CASE("header round trip property over randomized valid fields") {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> digd(-5000, -1), digu(1, 5000);
    std::uniform_real_distribution<double> phys(-500.0, 500.0);
    std::uniform_int_distribution<std::size_t> sprd(1, 500);
    for (int trial = 0; trial < 50; ++trial) {
        FixtureSignal s;
        s.label = "SIG" + std::to_string(trial);
        s.dig_min = digd(rng);
        s.dig_max = digu(rng);
        s.phys_min = std::floor(phys(rng));
        s.phys_max = s.phys_min + 1.0 + std::floor(std::abs(phys(rng)));
        s.samples_per_record = sprd(rng);
        s.samples.assign(s.samples_per_record, 0);
        auto bytes = serialize_edf({s}, 1, 1.0);
        auto h = edf::parse_header(bytes);
        CHECK(h.signals[0].label == s.label);
        CHECK(h.signals[0].dig_min == s.dig_min);
        CHECK(h.signals[0].dig_max == s.dig_max);
        CHECK(h.signals[0].phys_min == s.phys_min);
        CHECK(h.signals[0].phys_max == s.phys_max);
        CHECK(h.signals[0].samples_per_record == s.samples_per_record);
    }
}

TEST_CASE("NSE1 epoch store round trip") {
    CHECK(edf::read_epoch_store(edf::write_epoch_store({})).empty());

    std::vector<EpochRecord> epochs;
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<float> d(-3.0f, 3.0f);
    for (std::uint32_t i = 0; i < 3; ++i) {
        EpochRecord ep;
        ep.channels = 2;
        ep.width = 50;
        ep.samples.resize(100);
        for (auto& v : ep.samples) v = double(d(rng));  // f32-representable
        ep.label = i;
        ep.subject_id = "S" + std::to_string(i);
        ep.epoch_index = i * 7;
        epochs.push_back(ep);
    }
    auto bytes = edf::write_epoch_store(epochs);
    auto back = edf::read_epoch_store(bytes);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].channels == epochs[i].channels);
        CHECK(back[i].width == epochs[i].width);
        CHECK(back[i].samples == epochs[i].samples);
        CHECK(back[i].label == epochs[i].label);
        CHECK(back[i].subject_id == epochs[i].subject_id);
        CHECK(back[i].epoch_index == epochs[i].epoch_index);
    }
    // Byte-level identity through a second round trip.
    CHECK(edf::write_epoch_store(back) == bytes);

    auto corrupted = bytes;
    corrupted[0] = 'X';
    CHECK_THROWS(edf::read_epoch_store(corrupted));
    auto truncated = bytes;
    truncated.resize(truncated.size() - 1);
    CHECK_THROWS(edf::read_epoch_store(truncated));
}
