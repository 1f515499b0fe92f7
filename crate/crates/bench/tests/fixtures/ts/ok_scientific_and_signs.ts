@problemName sci
@univariate true
@classLabel true a b
@data
1e10,-2.5E-7,+3,0.0000001:a
-0,123456789.125,-1e-300,6.02214076e23:b
