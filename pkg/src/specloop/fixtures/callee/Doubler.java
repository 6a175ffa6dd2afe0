//@ ensures \result == -2*x;
int f(int x) { return g(-x); }
int g(int x) { return x+x; }
