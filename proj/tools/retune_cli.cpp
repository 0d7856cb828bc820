#include "retune/cli.hpp"

int main(int argc, char** argv) { return retune::dispatch(argc, argv); }
