#pragma once

#include "event.hpp"
#include "rngstream.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>

namespace tiewarp
{
    inline constexpr std::string_view trace_columns = "commit_index,lp,timestamp,tiebreak,source_lp,serial";

    // Columns are fixed and floats use shortest round-trip decimal, so the text
    // is identical on every platform. The source PE is deliberately absent: it
    // depends on the worker count, the committed order does not.
    inline void write_trace_row(std::string &out, const TraceEntry &e)
    {
        out += std::to_string(e.commit_index);
        out += ',';
        out += std::to_string(e.dest_lp);
        out += ',';
        out += format_timestamp(e.signature.timestamp);
        out += ',';
        out += format_tiebreak(e.signature);
        out += ',';
        out += std::to_string(e.identity.source_lp);
        out += ',';
        out += std::to_string(e.identity.serial);
        out += '\n';
    }

    // Column header, one row per committed event, then one `final` line per LP.
    // This is exactly what the digest covers.
    inline std::string canonical_serialization(const Trace &trace)
    {
        std::string out;
        out.reserve(trace.committed.size() * 64 + trace.final_states.size() * 24 + 64);
        out += trace_columns;
        out += '\n';
        for (const auto &e : trace.committed)
        {
            write_trace_row(out, e);
        }
        for (std::size_t lp = 0; lp < trace.final_states.size(); ++lp)
        {
            out += "final,";
            out += std::to_string(lp);
            out += ',';
            out += format_timestamp(trace.final_states[lp].mean_val);
            out += '\n';
        }
        return out;
    }

    inline std::string sha256_hex(std::string_view data)
    {
        std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
            EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
            EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
        {
            throw std::runtime_error("sha256 failed");
        }
        std::string hex;
        hex.reserve(len * 2);
        char buf[3];
        for (unsigned int i = 0; i < len; ++i)
        {
            std::snprintf(buf, sizeof(buf), "%02x", md[i]);
            hex += buf;
        }
        return hex;
    }

    inline std::string trace_digest(const Trace &trace) { return sha256_hex(canonical_serialization(trace)); }

    // Comment header recording what produced the trace, then the canonical body.
    inline void write_trace_csv(std::ostream &os, const Trace &trace, std::string_view model_name)
    {
        os << "# generator=" << generator_name << "/" << generator_version << '\n';
        os << "# global_seed=" << trace.global_seed << '\n';
        os << "# mode=" << to_string(trace.mode) << '\n';
        os << "# model=" << model_name << '\n';
        os << canonical_serialization(trace);
    }

    struct AuditReport
    {
        std::uint64_t order_violations = 0;
        std::uint64_t parent_violations = 0;
        std::uint64_t missing_parents = 0;

        bool ok() const noexcept { return order_violations == 0 && parent_violations == 0 && missing_parents == 0; }
    };

    // Checks that commits never decrease under the trace's comparator and that
    // every event is committed after the event that created it.
    inline AuditReport audit_trace(const Trace &trace, std::size_t sequence_cap = default_sequence_cap)
    {
        AuditReport report;
        const auto &c = trace.committed;
        for (std::size_t i = 1; i < c.size(); ++i)
        {
            const auto &a = c[i - 1];
            const auto &b = c[i];
            if (trace.mode == OrderingMode::none)
            {
                if (b.signature.timestamp < a.signature.timestamp)
                {
                    ++report.order_violations;
                }
            }
            else if (compare_events(a.signature, a.identity, b.signature, b.identity, trace.mode, nullptr,
                                    sequence_cap) >= 0)
            {
                ++report.order_violations;
            }
        }

        std::unordered_map<EventRef, std::size_t, EventRefHash> position;
        position.reserve(c.size());
        for (std::size_t i = 0; i < c.size(); ++i)
        {
            position.emplace(ref_of(c[i].identity), i);
        }
        for (std::size_t i = 0; i < c.size(); ++i)
        {
            if (!c[i].has_parent)
            {
                continue;
            }
            auto it = position.find(c[i].parent);
            if (it == position.end())
            {
                ++report.missing_parents;
            }
            else if (it->second >= i)
            {
                ++report.parent_violations;
            }
        }
        return report;
    }
}
