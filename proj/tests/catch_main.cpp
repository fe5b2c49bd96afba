// Compiles the Catch2 amalgamated implementation (provides main).
#include <catch2/catch_amalgamated.cpp>
