#pragma once

#include "models.hpp"
#include "rngstream.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <utility>
#include <vector>

namespace tiewarp
{
    // Draw source that replays hand-picked values for chosen (LP, purpose)
    // streams and falls back to Philox past the end of a script.
    class ScriptedSource
    {
    public:
        struct Prepared
        {
            const std::vector<std::uint64_t> *script = nullptr;
            philox::Key fallback{};
        };

        ScriptedSource() : m_scripts(std::make_shared<Scripts>()) {}

        void script(LpId lp, StreamPurpose purpose, std::vector<std::uint64_t> values)
        {
            (*m_scripts)[{lp, purpose}] = std::move(values);
        }

        Prepared prepare(const StreamKey &key) const
        {
            Prepared p;
            p.fallback = key.philox_key();
            if (auto it = m_scripts->find({key.lp, key.purpose}); it != m_scripts->end())
            {
                p.script = &it->second;
            }
            return p;
        }

        std::uint64_t operator()(const Prepared &p, const StreamKey &, std::uint64_t index) const noexcept
        {
            if (p.script != nullptr && index < p.script->size())
            {
                return (*p.script)[index];
            }
            return draw_at(p.fallback, index);
        }

    private:
        using Scripts = std::map<std::pair<LpId, StreamPurpose>, std::vector<std::uint64_t>>;
        std::shared_ptr<Scripts> m_scripts;
    };

    static_assert(DrawSource<ScriptedSource>);

    // Fixed-point image of a fraction in [0,1): round(f * 2^64).
    inline std::uint64_t fraction_bits(double f) noexcept
    {
        return static_cast<std::uint64_t>(std::ldexp(f, 64));
    }

    namespace scenarios
    {
        // Two tied chains A -> A' -> A'' (LP 0) and B -> B' (LP 1) at t=1 with
        // tie-break draws A=0.1, B=0.15, A'=0.40, B'=0.30, A''=0.20.
        struct ZeroOffsetDemo
        {
            models::TiedChains model{{3, 2}};
            ScriptedSource source;

            ZeroOffsetDemo()
            {
                source.script(0, StreamPurpose::tiebreak,
                              {fraction_bits(0.1), fraction_bits(0.40), fraction_bits(0.20)});
                source.script(1, StreamPurpose::tiebreak, {fraction_bits(0.15), fraction_bits(0.30)});
            }

            // Event names keyed by (source LP, serial).
            static const char *label(LpId lp, std::uint64_t serial) noexcept
            {
                static const char *lp0[] = {"A", "A'", "A''"};
                static const char *lp1[] = {"B", "B'"};
                if (lp == 0 && serial < 3)
                {
                    return lp0[serial];
                }
                if (lp == 1 && serial < 2)
                {
                    return lp1[serial];
                }
                return "?";
            }
        };
    }
}
