#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "xsketch/notedata.hpp"

// Standard MIDI File format 0 writer/reader, 480 ticks per quarter, one
// tempo meta event (500000 us/quarter = BPM 120). The reader exists so the
// emitted files can be verified programmatically.
namespace xsketch::midi {

constexpr int kTicksPerQuarter = 480;
constexpr int kTempoUsPerQuarter = 500000;
constexpr double kTicksPerSecond = kTicksPerQuarter * 1e6 / kTempoUsPerQuarter;  // 960

struct Event {
    long tick = 0;
    uint8_t status = 0;
    uint8_t data1 = 0;
    uint8_t data2 = 0;
};

namespace detail {
inline void put_u32(std::string& s, uint32_t v) {
    s.push_back(static_cast<char>((v >> 24) & 0xff));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>(v & 0xff));
}
inline void put_u16(std::string& s, uint16_t v) {
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>(v & 0xff));
}
inline void put_varlen(std::string& s, long v) {
    uint32_t buf = v & 0x7f;
    while ((v >>= 7) > 0) {
        buf <<= 8;
        buf |= 0x80 | (v & 0x7f);
    }
    while (true) {
        s.push_back(static_cast<char>(buf & 0xff));
        if (buf & 0x80)
            buf >>= 8;
        else
            break;
    }
}
}  // namespace detail

inline std::string render_bytes(const std::vector<notedata::PerfNote>& perf,
                                const std::vector<notedata::ScoreNote>& score) {
    std::vector<Event> events;
    events.reserve(perf.size() * 2);
    for (size_t i = 0; i < perf.size(); ++i) {
        const auto& n = perf[i];
        const int vel = static_cast<int>(
            notedata::clip(std::round(n.velocity), notedata::kVelocityLow, notedata::kVelocityHigh));
        const long on = std::lround(n.onset_s * kTicksPerSecond);
        long off = std::lround((n.onset_s + n.dur_s) * kTicksPerSecond);
        if (off <= on) off = on + 1;
        const uint8_t pitch = static_cast<uint8_t>(score[i].pitch);
        events.push_back({on, 0x90, pitch, static_cast<uint8_t>(vel)});
        events.push_back({off, 0x80, pitch, 0});
    }
    // note-offs first at equal ticks so retriggered pitches do not cancel
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
        if (a.tick != b.tick) return a.tick < b.tick;
        return a.status < b.status;
    });

    std::string track;
    // tempo meta
    detail::put_varlen(track, 0);
    track += '\xff';
    track += '\x51';
    track += '\x03';
    track.push_back(static_cast<char>((kTempoUsPerQuarter >> 16) & 0xff));
    track.push_back(static_cast<char>((kTempoUsPerQuarter >> 8) & 0xff));
    track.push_back(static_cast<char>(kTempoUsPerQuarter & 0xff));
    long cursor = 0;
    for (const auto& e : events) {
        detail::put_varlen(track, e.tick - cursor);
        cursor = e.tick;
        track.push_back(static_cast<char>(e.status));
        track.push_back(static_cast<char>(e.data1));
        track.push_back(static_cast<char>(e.data2));
    }
    detail::put_varlen(track, 0);  // end of track
    track += '\xff';
    track += '\x2f';
    track += '\x00';

    std::string out;
    out += "MThd";
    detail::put_u32(out, 6);
    detail::put_u16(out, 0);  // format 0
    detail::put_u16(out, 1);  // one track
    detail::put_u16(out, kTicksPerQuarter);
    out += "MTrk";
    detail::put_u32(out, static_cast<uint32_t>(track.size()));
    out += track;
    return out;
}

inline void write_file(const std::string& path, const std::vector<notedata::PerfNote>& perf,
                       const std::vector<notedata::ScoreNote>& score) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path + " for writing");
    const std::string bytes = render_bytes(perf, score);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---- reader (verification) --------------------------------------------------

struct MidiNote {
    int pitch = 0;
    int velocity = 0;
    long onset_tick = 0;
    long dur_tick = 0;
};

struct MidiFile {
    int division = 0;
    long tempo_us = 0;
    std::vector<MidiNote> notes;
};

namespace detail {
struct Cursor {
    const std::string& s;
    size_t pos = 0;
    uint8_t u8() {
        if (pos >= s.size()) throw DataError("midi: truncated file");
        return static_cast<uint8_t>(s[pos++]);
    }
    uint32_t u32() { return (u8() << 24u) | (u8() << 16u) | (u8() << 8u) | u8(); }
    uint16_t u16() { return static_cast<uint16_t>((u8() << 8u) | u8()); }
    long varlen() {
        long v = 0;
        uint8_t b;
        do {
            b = u8();
            v = (v << 7) | (b & 0x7f);
        } while (b & 0x80);
        return v;
    }
};
}  // namespace detail

inline MidiFile parse_bytes(const std::string& bytes) {
    detail::Cursor c{bytes};
    if (bytes.substr(0, 4) != "MThd") throw DataError("midi: missing MThd");
    c.pos = 4;
    const uint32_t hlen = c.u32();
    c.u16();  // format
    const uint16_t ntrk = c.u16();
    MidiFile out;
    out.division = c.u16();
    c.pos = 8 + hlen;

    std::vector<std::pair<int, std::pair<long, int>>> open;  // pitch -> (tick, vel)
    for (int t = 0; t < ntrk; ++t) {
        if (bytes.substr(c.pos, 4) != "MTrk") throw DataError("midi: missing MTrk");
        c.pos += 4;
        const uint32_t len = c.u32();
        const size_t end = c.pos + len;
        long tick = 0;
        uint8_t running = 0;
        while (c.pos < end) {
            tick += c.varlen();
            uint8_t status = c.u8();
            if (status < 0x80) {  // running status
                --c.pos;
                status = running;
            } else if (status < 0xf0) {
                running = status;
            }
            if (status == 0xff) {
                const uint8_t type = c.u8();
                const long mlen = c.varlen();
                if (type == 0x51 && mlen == 3) {
                    out.tempo_us = (c.u8() << 16) | (c.u8() << 8) | c.u8();
                } else {
                    c.pos += mlen;
                }
            } else if (status == 0xf0 || status == 0xf7) {
                c.pos += c.varlen();
            } else {
                const uint8_t hi = status & 0xf0;
                const uint8_t d1 = c.u8();
                const uint8_t d2 = (hi == 0xc0 || hi == 0xd0) ? 0 : c.u8();
                if (hi == 0x90 && d2 > 0) {
                    open.push_back({d1, {tick, d2}});
                } else if (hi == 0x80 || (hi == 0x90 && d2 == 0)) {
                    for (auto it = open.begin(); it != open.end(); ++it) {
                        if (it->first == d1) {
                            out.notes.push_back(
                                {d1, it->second.second, it->second.first, tick - it->second.first});
                            open.erase(it);
                            break;
                        }
                    }
                }
            }
        }
        c.pos = end;
    }
    std::sort(out.notes.begin(), out.notes.end(), [](const MidiNote& a, const MidiNote& b) {
        if (a.onset_tick != b.onset_tick) return a.onset_tick < b.onset_tick;
        return a.pitch < b.pitch;
    });
    return out;
}

inline MidiFile read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_bytes(bytes);
}

}  // namespace xsketch::midi
