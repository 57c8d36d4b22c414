#ifndef IRRCAST_LOGGING_HPP
#define IRRCAST_LOGGING_HPP

#include <string>

namespace irrcast::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

/// Current level, initialized once from the IRRCAST_LOG environment
/// variable ({error|info|debug}, default info).
Level level();
void set_level(Level lv);

void error(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

} // namespace irrcast::log

#endif // IRRCAST_LOGGING_HPP
