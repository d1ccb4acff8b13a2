/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

#include <nlohmann/json.hpp>

namespace veil
{

enum class LogLevel
{
    debug = 0,
    info  = 1,
    warn  = 2,
    error = 3,
};

/// Line-oriented JSON logging to stderr; VEIL_LOG selects the minimum
/// level (debug|info|warn|error, default info).
class Logger
{
public:
    static Logger& instance()
    {
        static Logger logger;
        return logger;
    }

    void log( LogLevel level, const std::string& event, nlohmann::json fields = {} )
    {
        if( level < m_min_level )
            return;
        fields["ts_us"] = std::chrono::duration_cast<std::chrono::microseconds>(
                std::chrono::system_clock::now().time_since_epoch() )
                                  .count();
        fields["level"] = level_name( level );
        fields["event"] = event;
        std::lock_guard<std::mutex> lock( m_mutex );
        std::cerr << fields.dump() << '\n';
    }

private:
    Logger()
    {
        if( const char* env = std::getenv( "VEIL_LOG" ) )
        {
            const std::string v( env );
            if( v == "debug" )
                m_min_level = LogLevel::debug;
            else if( v == "info" )
                m_min_level = LogLevel::info;
            else if( v == "warn" )
                m_min_level = LogLevel::warn;
            else if( v == "error" )
                m_min_level = LogLevel::error;
        }
    }

    static const char* level_name( LogLevel level )
    {
        switch( level )
        {
            case LogLevel::debug: return "debug";
            case LogLevel::info:  return "info";
            case LogLevel::warn:  return "warn";
            case LogLevel::error: return "error";
        }
        return "?";
    }

    LogLevel   m_min_level = LogLevel::info;
    std::mutex m_mutex;
};

inline void log_debug( const std::string& event, nlohmann::json fields = {} )
{
    Logger::instance().log( LogLevel::debug, event, std::move( fields ) );
}
inline void log_info( const std::string& event, nlohmann::json fields = {} )
{
    Logger::instance().log( LogLevel::info, event, std::move( fields ) );
}
inline void log_warn( const std::string& event, nlohmann::json fields = {} )
{
    Logger::instance().log( LogLevel::warn, event, std::move( fields ) );
}
inline void log_error( const std::string& event, nlohmann::json fields = {} )
{
    Logger::instance().log( LogLevel::error, event, std::move( fields ) );
}

} // namespace veil
