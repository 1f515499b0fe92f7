@PROBLEMNAME upper
@UniVariate TRUE
@CLASSLABEL true p q
@DATA
9,8,7,6:q
